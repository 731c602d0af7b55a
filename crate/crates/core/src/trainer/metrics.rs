//! Per-interval training metrics, written as JSON lines with a CSV mirror.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One logging interval. Loss fields are interval means and are `None`
/// when no update of that kind ran during the interval.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub timestep: u64,
    pub episodes: u64,
    /// Mean return of training episodes finished during the interval.
    pub train_return: Option<f64>,
    pub eval_return: f64,
    pub eval_return_std: f64,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub temperature_loss: Option<f64>,
    pub dynamics_loss: Option<f64>,
    pub reward_loss: Option<f64>,
    pub termination_loss: Option<f64>,
    pub alpha: f64,
    /// Mean of `-log pi` over the actor's batches.
    pub entropy: Option<f64>,
    pub target_entropy: f64,
    /// Per-element squared error of `val_steps`-step model predictions.
    pub model_mse: Option<f64>,
    /// Cumulative count of sampled sequences that failed the replay audit.
    pub sequence_violations: u64,
}

/// Running means of the quantities logged per interval.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Accumulator {
    sums: [f64; 7],
    counts: [u64; 7],
    train_returns: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Stat {
    Critic,
    Actor,
    Temperature,
    Dynamics,
    Reward,
    Termination,
    Entropy,
}

impl Accumulator {
    pub fn add(&mut self, stat: Stat, value: f64) {
        self.sums[stat as usize] += value;
        self.counts[stat as usize] += 1;
    }

    pub fn mean(&self, stat: Stat) -> Option<f64> {
        let i = stat as usize;
        (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
    }

    pub fn episode_finished(&mut self, ret: f64) {
        self.train_returns.push(ret);
    }

    pub fn train_return(&self) -> Option<f64> {
        (!self.train_returns.is_empty()).then(|| self.train_returns.iter().sum::<f64>() / self.train_returns.len() as f64)
    }
}

/// Writes rows to `metrics.jsonl` and `metrics.csv` in a directory.
pub struct MetricsWriter {
    jsonl: BufWriter<File>,
    csv: csv::Writer<File>,
}

impl MetricsWriter {
    /// Creates (truncating) both files.
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(MetricsWriter {
            jsonl: BufWriter::new(File::create(dir.join("metrics.jsonl"))?),
            csv: csv::Writer::from_path(dir.join("metrics.csv"))?,
        })
    }

    /// Appends to existing files, writing no second CSV header.
    pub fn append(dir: &Path) -> Result<Self> {
        let open = |name: &str| std::fs::OpenOptions::new().append(true).create(true).open(dir.join(name));
        let csv_file = open("metrics.csv")?;
        let has_header = csv_file.metadata()?.len() > 0;
        Ok(MetricsWriter {
            jsonl: BufWriter::new(open("metrics.jsonl")?),
            csv: csv::WriterBuilder::new().has_headers(!has_header).from_writer(csv_file),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        serde_json::to_writer(&mut self.jsonl, row)?;
        self.jsonl.write_all(b"\n")?;
        self.csv.serialize(row)?;
        self.jsonl.flush()?;
        self.csv.flush()?;
        Ok(())
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: u64) -> MetricsRow {
        MetricsRow {
            timestep: t,
            episodes: t / 200,
            train_return: Some(-1234.5678),
            eval_return: -0.1 - 0.2,
            eval_return_std: 3.0,
            critic_loss: None,
            actor_loss: Some(1e-300),
            temperature_loss: Some(-2.5),
            dynamics_loss: None,
            reward_loss: Some(0.25),
            termination_loss: None,
            alpha: 0.1,
            entropy: Some(0.9),
            target_entropy: -1.0,
            model_mse: Some(4e-4),
            sequence_violations: 0,
        }
    }

    #[test]
    fn jsonl_and_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MetricsWriter::create(dir.path()).unwrap();
        w.write(&row(1000)).unwrap();
        drop(w);
        let mut w = MetricsWriter::append(dir.path()).unwrap();
        w.write(&row(2000)).unwrap();
        drop(w);
        let rows = read_jsonl(&dir.path().join("metrics.jsonl")).unwrap();
        assert_eq!(rows, vec![row(1000), row(2000)]);
        let mut csv = csv::Reader::from_path(dir.path().join("metrics.csv")).unwrap();
        let back: Vec<MetricsRow> = csv.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(back, rows);
    }

    #[test]
    fn accumulator_means() {
        let mut a = Accumulator::default();
        assert!(a.mean(Stat::Actor).is_none() && a.train_return().is_none());
        a.add(Stat::Actor, 1.0);
        a.add(Stat::Actor, 2.0);
        a.episode_finished(-4.0);
        assert_eq!(a.mean(Stat::Actor), Some(1.5));
        assert_eq!(a.train_return(), Some(-4.0));
        assert!(a.mean(Stat::Critic).is_none());
    }
}
