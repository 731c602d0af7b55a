//! Binary replay dump.
//!
//! ```text
//! magic b"SVGREPLY", version u32 = 1
//! state_dim u32, action_dim u32, capacity u64, next_id u64, open u8
//! records until end of stream:
//!   record_len u32 (bytes that follow)
//!   episode_id u64, state f64 x m, action f64 x n, reward f64,
//!   next_state f64 x m, flags u8 (bit 0 done, bit 1 truncated)
//! ```
//!
//! Records are written oldest first and consecutive records with the same
//! episode id form one episode.

use std::io::{ErrorKind, Read, Write};

use super::{Episode, EpisodeBuffer, Transition};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SVGREPLY";
const VERSION: u32 = 1;

pub fn write_buffer<W: Write>(w: &mut W, buf: &EpisodeBuffer) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(buf.state_dim as u32).to_le_bytes())?;
    w.write_all(&(buf.action_dim as u32).to_le_bytes())?;
    w.write_all(&(buf.capacity as u64).to_le_bytes())?;
    w.write_all(&buf.next_id.to_le_bytes())?;
    w.write_all(&[u8::from(buf.open)])?;
    let record_len = 8 + 8 * (2 * buf.state_dim + buf.action_dim + 1) + 1;
    let mut record = Vec::with_capacity(record_len);
    for e in &buf.episodes {
        for t in &e.transitions {
            record.clear();
            record.extend_from_slice(&e.id.to_le_bytes());
            for v in t.state.iter().chain(&t.action).chain([&t.reward]).chain(&t.next_state) {
                record.extend_from_slice(&v.to_le_bytes());
            }
            record.push(u8::from(t.done) | (u8::from(t.truncated) << 1));
            w.write_all(&(record.len() as u32).to_le_bytes())?;
            w.write_all(&record)?;
        }
    }
    Ok(())
}

fn take<const K: usize>(bytes: &mut &[u8]) -> [u8; K] {
    let (head, rest) = bytes.split_at(K);
    *bytes = rest;
    head.try_into().unwrap()
}

pub fn read_buffer<R: Read>(r: &mut R) -> Result<EpisodeBuffer> {
    let mut header = [0u8; 8 + 4 + 4 + 4 + 8 + 8 + 1];
    r.read_exact(&mut header)?;
    let mut h = &header[..];
    if &take::<8>(&mut h) != MAGIC {
        return Err(Error::Format("not a replay dump".into()));
    }
    let version = u32::from_le_bytes(take(&mut h));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported replay dump version {version}")));
    }
    let m = u32::from_le_bytes(take(&mut h)) as usize;
    let n = u32::from_le_bytes(take(&mut h)) as usize;
    let capacity = u64::from_le_bytes(take(&mut h)) as usize;
    let next_id = u64::from_le_bytes(take(&mut h));
    let open = take::<1>(&mut h)[0] != 0;

    let mut buf = EpisodeBuffer::new(m, n, capacity)?;
    let expected = 8 + 8 * (2 * m + n + 1) + 1;
    let mut record = vec![0u8; expected];
    loop {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        if u32::from_le_bytes(len) as usize != expected {
            return Err(Error::Format("replay record has the wrong length".into()));
        }
        r.read_exact(&mut record)?;
        let mut b = &record[..];
        let id = u64::from_le_bytes(take(&mut b));
        let mut floats = |k: usize| -> Vec<f64> { (0..k).map(|_| f64::from_le_bytes(take(&mut b))).collect() };
        let state = floats(m);
        let action = floats(n);
        let reward = floats(1)[0];
        let next_state = floats(m);
        let flags = b[0];
        let t = Transition {
            state,
            action,
            reward,
            next_state,
            done: flags & 1 != 0,
            truncated: flags & 2 != 0,
        };
        if buf.episodes.back().map(|e| e.id) != Some(id) {
            buf.episodes.push_back(Episode {
                id,
                transitions: Vec::new(),
            });
        }
        buf.episodes.back_mut().unwrap().transitions.push(t);
        buf.len += 1;
    }
    if buf.len > capacity || !buf.is_chained() {
        return Err(Error::Format("replay dump violates buffer invariants".into()));
    }
    buf.next_id = next_id;
    buf.open = open && !buf.episodes.is_empty();
    Ok(buf)
}
