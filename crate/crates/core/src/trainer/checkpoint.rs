//! Checkpoint directories.
//!
//! ```text
//! params.bin   parameter archive: networks, critic targets, log_alpha,
//!              Adam moments (adam.<optimizer>.m.<i> / .v.<i>),
//!              normalizer moments, current observation, environment state
//! meta.json    config text, counters, Adam step counts, random stream
//!              positions, interval accumulators
//! replay.bin   replay dump
//! ```
//!
//! Restoring reproduces the run bit for bit.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::Accumulator;
use super::run::{Trainer, STREAM_NAMES};
use crate::autodiff::Tensor;
use crate::envs::EnvSnapshot;
use crate::error::{Error, Result};
use crate::nn::{read_params, write_params};
use crate::replay::{read_buffer, write_buffer, Normalizer};

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    version: u32,
    config: String,
    timestep: u64,
    episodes: u64,
    episode_return: f64,
    violations: u64,
    normalizer_count: u64,
    adam_steps: Vec<(String, u64)>,
    /// Word positions are 128-bit, so they are stored as decimal strings.
    streams: Vec<(String, String)>,
    env_steps: usize,
    env_ended: bool,
    accumulator: Accumulator,
}

fn vector(values: &[f64]) -> Result<Tensor> {
    Tensor::new([values.len()], values.to_vec())
}

/// Writes `path` through a temporary sibling so a crash never leaves a
/// half-written file under the final name.
fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp)?);
    write(&mut w)?;
    w.flush()?;
    drop(w);
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(trainer: &Trainer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let learner = &trainer.learner;
    let mut owned: Vec<(String, Tensor)> = Vec::new();
    for (name, adam) in learner.optimizers.named() {
        let (m, v) = adam.moments();
        for (i, (a, b)) in m.iter().zip(v).enumerate() {
            owned.push((format!("adam.{name}.m.{i}"), a.clone()));
            owned.push((format!("adam.{name}.v.{i}"), b.clone()));
        }
    }
    let (count, mean, m2) = trainer.normalizer.raw();
    owned.push(("normalizer.mean".into(), vector(mean)?));
    owned.push(("normalizer.m2".into(), vector(m2)?));
    owned.push(("trainer.obs".into(), vector(&trainer.obs)?));
    let snapshot = trainer.env.save();
    if !snapshot.values.is_empty() {
        owned.push(("env.values".into(), vector(&snapshot.values)?));
    }
    let mut entries: Vec<(&str, &Tensor)> = learner.all_params().into_iter().map(|p| (p.name.as_str(), &p.value)).collect();
    entries.extend(owned.iter().map(|(n, t)| (n.as_str(), t)));
    write_atomic(&dir.join("params.bin"), |w| write_params(w, &entries))?;

    let meta = Meta {
        version: FORMAT_VERSION,
        config: trainer.config.to_text(),
        timestep: trainer.t,
        episodes: trainer.episodes,
        episode_return: trainer.episode_return,
        violations: trainer.violations,
        normalizer_count: count,
        adam_steps: learner
            .optimizers
            .named()
            .iter()
            .map(|(n, a)| (n.to_string(), a.step_count()))
            .collect(),
        streams: STREAM_NAMES
            .iter()
            .zip(trainer.streams.all())
            .map(|(n, r)| (n.to_string(), r.get_word_pos().to_string()))
            .collect(),
        env_steps: snapshot.steps,
        env_ended: snapshot.ended,
        accumulator: trainer.acc.clone(),
    };
    write_atomic(&dir.join("meta.json"), |w| Ok(serde_json::to_writer_pretty(w, &meta)?))?;
    write_atomic(&dir.join("replay.bin"), |w| write_buffer(w, &trainer.buffer))
}

fn missing(what: &str) -> Error {
    Error::Format(format!("checkpoint lacks {what}"))
}

fn take(tensors: &mut HashMap<String, Tensor>, name: &str) -> Result<Tensor> {
    tensors.remove(name).ok_or_else(|| missing(name))
}

pub fn load_checkpoint(dir: &Path) -> Result<Trainer> {
    let meta: Meta = serde_json::from_reader(BufReader::new(File::open(dir.join("meta.json"))?))?;
    if meta.version != FORMAT_VERSION {
        return Err(Error::Format(format!("checkpoint version {} is not {FORMAT_VERSION}", meta.version)));
    }
    let config = TrainConfig::from_text(&meta.config)?;
    let floor = config.norm_floor;
    let mut trainer = Trainer::new(config)?;
    let mut tensors: HashMap<String, Tensor> = read_params(&mut BufReader::new(File::open(dir.join("params.bin"))?))?
        .into_iter()
        .collect();

    for p in trainer.learner.all_params_mut() {
        let value = take(&mut tensors, &p.name)?;
        if value.shape() != p.value.shape() {
            return Err(Error::Format(format!(
                "parameter {} has shape {:?}, expected {:?}",
                p.name,
                value.dims(),
                p.value.dims()
            )));
        }
        p.value = value;
    }
    let steps: HashMap<&str, u64> = meta.adam_steps.iter().map(|(n, s)| (n.as_str(), *s)).collect();
    for (name, adam) in trainer.learner.optimizers.named_mut() {
        let (mut m, mut v) = (Vec::new(), Vec::new());
        while let Some(a) = tensors.remove(&format!("adam.{name}.m.{}", m.len())) {
            v.push(take(&mut tensors, &format!("adam.{name}.v.{}", m.len()))?);
            m.push(a);
        }
        let step = *steps.get(name).ok_or_else(|| missing(&format!("adam step of {name}")))?;
        adam.restore(step, m, v)?;
    }
    let mean = take(&mut tensors, "normalizer.mean")?.into_data();
    let m2 = take(&mut tensors, "normalizer.m2")?.into_data();
    trainer.normalizer = Normalizer::from_raw(meta.normalizer_count, mean, m2, floor)?;
    trainer.obs = take(&mut tensors, "trainer.obs")?.into_data();
    let values = tensors.remove("env.values").map(Tensor::into_data).unwrap_or_default();
    trainer.env.restore(&EnvSnapshot {
        values,
        steps: meta.env_steps,
        ended: meta.env_ended,
    })?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("checkpoint holds unknown tensor {extra}")));
    }

    let positions: HashMap<&str, &str> = meta.streams.iter().map(|(n, p)| (n.as_str(), p.as_str())).collect();
    for (name, rng) in STREAM_NAMES.iter().zip(trainer.streams.all_mut()) {
        let pos = positions.get(name).ok_or_else(|| missing(&format!("stream {name}")))?;
        let pos: u128 = pos
            .parse()
            .map_err(|_| Error::Format(format!("stream {name} position {pos:?} is not an integer")))?;
        rng.set_word_pos(pos);
    }
    trainer.buffer = read_buffer(&mut BufReader::new(File::open(dir.join("replay.bin"))?))?;
    trainer.t = meta.timestep;
    trainer.episodes = meta.episodes;
    trainer.episode_return = meta.episode_return;
    trainer.violations = meta.violations;
    trainer.acc = meta.accumulator;
    Ok(trainer)
}
