use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::load_checkpoint;
use crate::envs::{make_env, Env};
use crate::error::Result;
use crate::policy::TanhGaussianActor;
use crate::replay::NormStats;

/// Mean and population standard deviation of episode returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

impl EvalSummary {
    pub fn from_returns(returns: &[f64]) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        EvalSummary {
            mean,
            std: var.sqrt(),
            episodes: returns.len(),
        }
    }
}

/// Return of one episode under a deterministic `policy`.
fn episode_return(env: &mut dyn Env, policy: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync), seed: u64) -> Result<f64> {
    let mut x = env.reset(seed);
    let mut total = 0.0;
    loop {
        let step = env.step(&policy(&x)?)?;
        total += step.reward;
        if step.done || step.truncated {
            return Ok(total);
        }
        x = step.next_state;
    }
}

/// Runs one episode per seed on a fresh `env_name` environment. With
/// `parallel`, episodes run on scoped threads; the returns are identical
/// either way.
pub fn evaluate_with(
    policy: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync),
    env_name: &str,
    seeds: &[u64],
    parallel: bool,
) -> Result<EvalSummary> {
    let run = |seed: u64| -> Result<f64> {
        let mut env = make_env(env_name)?;
        episode_return(env.as_mut(), policy, seed)
    };
    let returns: Vec<f64> = if parallel && seeds.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || run(seed))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation thread panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        seeds.iter().map(|&s| run(s)).collect::<Result<_>>()?
    };
    Ok(EvalSummary::from_returns(&returns))
}

/// Mean-action episodes of `actor` on normalized observations.
pub fn evaluate_policy(
    actor: &TanhGaussianActor,
    stats: &NormStats,
    env_name: &str,
    seeds: &[u64],
    parallel: bool,
) -> Result<EvalSummary> {
    evaluate_with(&|x| actor.mean_action_for(&stats.normalize(x)), env_name, seeds, parallel)
}

/// Evaluates the policy stored in a checkpoint directory, optionally on a
/// different environment with matching dimensions. Episode seeds derive
/// from `seed` alone.
pub fn evaluate(checkpoint: &Path, env: Option<&str>, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let trainer = load_checkpoint(checkpoint)?;
    let env_name = env.unwrap_or(&trainer.config().env).to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..episodes).map(|_| rng.random()).collect();
    evaluate_policy(&trainer.learner().actor, &trainer.norm_stats(), &env_name, &seeds, false)
}
