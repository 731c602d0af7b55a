use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;

/// Appends a chained episode of `len` scalar transitions whose states encode
/// `(episode tag, step)`.
fn add_episode(buf: &mut EpisodeBuffer, tag: f64, len: usize, done: bool) {
    for t in 0..len {
        let last = t + 1 == len;
        buf.push(Transition {
            state: vec![tag + t as f64],
            action: vec![t as f64 * 0.01],
            reward: -(t as f64),
            next_state: vec![tag + t as f64 + 1.0],
            done: last && done,
            truncated: last && !done,
        })
        .unwrap();
    }
}

#[test]
fn single_transition_batch_repeats_it() {
    let mut buf = EpisodeBuffer::new(1, 1, 10).unwrap();
    add_episode(&mut buf, 0.0, 1, true);
    let b = buf.sample_steps(4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(b.states.data(), &[0.0; 4]);
    assert_eq!(b.done.data(), &[1.0; 4]);
    assert_eq!(b.truncated.data(), &[0.0; 4]);
}

#[test]
fn empty_buffer_and_short_episodes_fail() {
    let mut buf = EpisodeBuffer::new(1, 1, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(buf.sample_steps(1, &mut rng).is_err());
    add_episode(&mut buf, 0.0, 3, false);
    assert!(buf.sample_sequences(1, 4, &mut rng).is_err());
}

#[test]
fn seeded_sampling_is_reproducible() {
    let mut buf = EpisodeBuffer::new(1, 1, 1000).unwrap();
    for e in 0..10 {
        add_episode(&mut buf, 100.0 * e as f64, 7 + e, e % 2 == 0);
    }
    let a = buf.sample_steps(32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = buf.sample_steps(32, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a.indices, b.indices);
    assert_eq!(a.states, b.states);
    let s = buf.sample_sequences(16, 3, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let t = buf.sample_sequences(16, 3, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(s.origins, t.origins);
}

#[test]
fn step_sampling_is_uniform() {
    let mut buf = EpisodeBuffer::new(1, 1, 1000).unwrap();
    for (e, len) in [13, 40, 1, 26, 20].into_iter().enumerate() {
        add_episode(&mut buf, 1000.0 * e as f64, len, false);
    }
    assert_eq!(buf.len(), 100);
    let mut counts = [0u64; 100];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        for i in buf.sample_steps(1000, &mut rng).unwrap().indices {
            counts[i] += 1;
        }
    }
    let expected = 1000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

#[test]
fn indices_map_to_buffer_order() {
    let mut buf = EpisodeBuffer::new(1, 1, 1000).unwrap();
    add_episode(&mut buf, 0.0, 3, false);
    add_episode(&mut buf, 10.0, 2, true);
    let b = buf.sample_steps(64, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let all: Vec<f64> = buf.episodes().flat_map(|e| e.transitions.iter().map(|t| t.state[0])).collect();
    for (row, &i) in b.indices.iter().enumerate() {
        assert_eq!(b.states.row(row)[0], all[i]);
    }
}

#[test]
fn sequence_start_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut buf = EpisodeBuffer::new(1, 1, 100).unwrap();
    add_episode(&mut buf, 0.0, 5, true);
    assert_eq!(buf.sequence_starts(5), 1);
    let s = buf.sample_sequences(8, 5, &mut rng).unwrap();
    assert!(s.origins.iter().all(|&o| o == (0, 0)));
    assert_eq!(s.states.len(), 6);
    assert_eq!(s.actions.len(), 5);
    assert_eq!(s.states[5].data(), &[5.0; 8]);

    let mut buf = EpisodeBuffer::new(1, 1, 100).unwrap();
    add_episode(&mut buf, 0.0, 3, false);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..200 {
        for (_, start) in buf.sample_sequences(4, 2, &mut rng).unwrap().origins {
            seen.insert(start + 1);
        }
    }
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 2]);
}

#[test]
fn sequences_never_cross_episodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut buf = EpisodeBuffer::new(1, 1, 400).unwrap();
    for e in 0..60 {
        let len = rng.random_range(1..12);
        add_episode(&mut buf, 1000.0 * e as f64, len, rng.random_bool(0.5));
    }
    let mut violations = 0;
    for _ in 0..10_000 / 50 {
        let s = buf.sample_sequences(50, 4, &mut rng).unwrap();
        violations += buf.audit_sequences(&s);
        for row in 0..50 {
            let first = s.states[0].row(row)[0];
            let last = s.states[4].row(row)[0];
            // States of one episode share a thousands tag.
            assert_eq!((first / 1000.0).floor(), ((last - 1.0) / 1000.0).floor());
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn audit_flags_spliced_rows() {
    let mut buf = EpisodeBuffer::new(1, 1, 100).unwrap();
    add_episode(&mut buf, 0.0, 4, true);
    add_episode(&mut buf, 50.0, 4, true);
    let mut s = buf.sample_sequences(3, 2, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(buf.audit_sequences(&s), 0);
    s.states[1].data_mut()[0] += 0.5;
    assert_eq!(buf.audit_sequences(&s), 1);
}

#[test]
fn eviction_drops_whole_oldest_episodes() {
    let mut buf = EpisodeBuffer::new(1, 1, 20).unwrap();
    for e in 0..10 {
        add_episode(&mut buf, 100.0 * e as f64, 6, false);
        assert!(buf.len() <= 20);
        assert!(buf.is_chained());
    }
    assert_eq!(buf.len(), 18);
    let ids: Vec<u64> = buf.episodes().map(|e| e.id).collect();
    assert_eq!(ids, vec![7, 8, 9]);
    assert!(buf.episodes().all(|e| e.len() == 6));

    let mut tiny = EpisodeBuffer::new(1, 1, 4).unwrap();
    add_episode(&mut tiny, 0.0, 9, false);
    assert_eq!(tiny.len(), 4);
    assert!(tiny.is_chained());
    assert_eq!(tiny.episodes().next().unwrap().transitions[0].state, vec![5.0]);
}

#[test]
fn push_validates_transitions() {
    let mut buf = EpisodeBuffer::new(1, 1, 10).unwrap();
    let t = |x: f64, done, truncated| Transition {
        state: vec![x],
        action: vec![0.0],
        reward: 0.0,
        next_state: vec![x + 1.0],
        done,
        truncated,
    };
    assert!(buf.push(t(0.0, true, true)).is_err());
    buf.push(t(0.0, false, false)).unwrap();
    assert!(buf.push(t(5.0, false, false)).is_err(), "broken chain");
    assert!(buf
        .push(Transition {
            state: vec![1.0, 2.0],
            ..t(1.0, false, false)
        })
        .is_err());
    buf.end_episode();
    buf.push(t(5.0, false, false)).unwrap();
    assert_eq!(buf.num_episodes(), 2);
}

#[test]
fn dump_round_trips_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut buf = EpisodeBuffer::new(2, 1, 50).unwrap();
    for _ in 0..12 {
        let len = rng.random_range(1..8);
        let mut x = vec![rng.random::<f64>(), rng.random::<f64>() * 1e-300];
        for t in 0..len {
            let next = vec![rng.random::<f64>() - 0.5, rng.random::<f64>()];
            buf.push(Transition {
                state: x.clone(),
                action: vec![rng.random_range(-1.0..1.0)],
                reward: rng.random::<f64>() * -3.0,
                next_state: next.clone(),
                done: t + 1 == len && t % 2 == 0,
                truncated: t + 1 == len && t % 2 == 1,
            })
            .unwrap();
            x = next;
        }
    }
    // Leave the newest episode open.
    let open = Transition {
        state: vec![0.25, 0.5],
        action: vec![0.0],
        reward: 1.0,
        next_state: vec![0.75, 0.5],
        done: false,
        truncated: false,
    };
    buf.push(open).unwrap();
    assert!(buf.is_open());
    let mut bytes = Vec::new();
    write_buffer(&mut bytes, &buf).unwrap();
    let back = read_buffer(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, buf);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_buffer(&mut bad.as_slice()), Err(Error::Format(_))));
    let cut = &bytes[..bytes.len() - 3];
    assert!(read_buffer(&mut &cut[..]).is_err());
}
