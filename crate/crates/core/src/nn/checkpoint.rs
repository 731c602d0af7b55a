//! Flat parameter archive.
//!
//! ```text
//! magic   b"SVGPARAM"
//! version u32 = 1
//! count   u32
//! repeated count times:
//!   name_len u32, name utf-8 bytes
//!   ndim u32, dims u64 x ndim
//!   values f64 x prod(dims)
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use super::param::Module;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SVGPARAM";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(w: &mut W, entries: &[(&str, &Tensor)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.dims().len() as u32).to_le_bytes())?;
        for &d in t.dims() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a parameter archive".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported archive version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
        let ndim = read_u32(r)? as usize;
        let dims = (0..ndim)
            .map(|_| read_u64(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    Ok(out)
}

/// Copies archived values into `module` by parameter name; every parameter
/// must be present with a matching shape.
pub fn load_into(module: &mut dyn Module, entries: &[(String, Tensor)]) -> Result<()> {
    for p in module.params_mut() {
        let (_, t) = entries
            .iter()
            .find(|(n, _)| *n == p.name)
            .ok_or_else(|| Error::Format(format!("missing parameter {}", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Format(format!(
                "parameter {} has shape {:?}, archive has {:?}",
                p.name,
                p.value.dims(),
                t.dims()
            )));
        }
        p.value = t.clone();
    }
    Ok(())
}
