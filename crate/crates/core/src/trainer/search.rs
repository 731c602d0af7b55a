//! Random search over target-entropy schedules.

use std::path::Path;

use log::info;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::MetricsRow;
use super::run::train;
use crate::agent::EntropySchedule;
use crate::error::Result;

/// The categorical sets the schedule parameters are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub init: Vec<f64>,
    /// Final entropies offered in addition to the drawn initial one.
    pub finals: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        let mut finals = vec![-5.0];
        finals.extend((0..=6).map(|i| -f64::powi(2.0, i)));
        SearchSpace {
            init: vec![1.0, 0.0, -1.0, -2.0],
            finals,
            betas: (0..=6).map(|i| f64::powi(2.0, i)).collect(),
        }
    }
}

/// Draws `(init, final, beta)`; the final entropy set always contains the
/// drawn initial value, so a constant schedule is possible.
pub fn draw_schedule<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> (f64, f64, f64) {
    let init = *space.init.choose(rng).expect("non-empty initial set");
    let mut finals = vec![init];
    finals.extend(space.finals.iter().copied().filter(|&f| f != init));
    let final_ = *finals.choose(rng).expect("non-empty final set");
    let beta = *space.betas.choose(rng).expect("non-empty decay set");
    (init, final_, beta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Draw order, so the ranking can be mapped back.
    pub trial: usize,
    pub seed: u64,
    pub schedule: EntropySchedule,
    /// Mean evaluation return over the last few logged rows.
    pub score: f64,
}

/// Rows averaged into a trial's score.
const SCORE_ROWS: usize = 3;

fn score(rows: &[MetricsRow]) -> f64 {
    let tail = &rows[rows.len().saturating_sub(SCORE_ROWS)..];
    tail.iter().map(|r| r.eval_return).sum::<f64>() / tail.len() as f64
}

/// Trains `trials` short runs of `base`, each with a freshly drawn schedule
/// and seed, and returns them best first (ties keep draw order). With
/// `out_dir`, each trial logs under `trial-<i>` and the ranking is written
/// to `ranking.json`.
pub fn entropy_search<R: Rng + ?Sized>(
    base: &TrainConfig,
    trials: usize,
    rng: &mut R,
    out_dir: Option<&Path>,
) -> Result<Vec<SearchResult>> {
    let space = SearchSpace::default();
    let mut results = Vec::with_capacity(trials);
    for trial in 0..trials {
        let (init, final_, beta) = draw_schedule(&space, rng);
        let mut config = base.clone();
        config.seed = rng.random();
        config.entropy_init = init;
        config.entropy_final = final_;
        config.entropy_beta = beta;
        let dir = out_dir.map(|d| d.join(format!("trial-{trial}")));
        let (_, rows) = train(config.clone(), dir.as_deref())?;
        let result = SearchResult {
            trial,
            seed: config.seed,
            schedule: config.schedule()?,
            score: score(&rows),
        };
        info!("trial {trial}: init {init} final {final_} beta {beta} -> {:.3}", result.score);
        results.push(result);
    }
    results.sort_by(|a, b| b.score.total_cmp(&a.score));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        serde_json::to_writer_pretty(std::fs::File::create(dir.join("ranking.json"))?, &results)?;
    }
    Ok(results)
}
