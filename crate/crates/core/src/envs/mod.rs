//! Seeded desk-scale environments sharing one MDP contract.
//!
//! Actions always live in `[-1, 1]^n`; each environment maps them to its own
//! internal ranges. Episodes end either by a state predicate (`done`) or by
//! the time limit (`truncated`), never both.

mod linear;
mod pendulum;
mod point_mass;

pub use linear::{oracle_value, LinearModel, LinearPolicy, LinearSystem};
pub use pendulum::Pendulum;
pub use point_mass::PointMassGap;

use crate::error::{Error, Result};

/// Outcome of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
}

pub trait Env {
    fn name(&self) -> &'static str;

    fn state_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    fn max_steps(&self) -> usize;

    /// Starts a new episode from a seeded initial state.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one step. Errors on an action outside the box or once the
    /// episode has ended.
    fn step(&mut self, action: &[f64]) -> Result<Step>;

    /// Current observation.
    fn observation(&self) -> Vec<f64>;

    /// Places the system in the state described by `observation` and starts
    /// a fresh episode clock.
    fn set_state(&mut self, observation: &[f64]) -> Result<()>;

    /// Exact internal state, including the episode clock, for checkpoints.
    fn save(&self) -> EnvSnapshot;

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()>;
}

/// Bit-exact environment state.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSnapshot {
    pub values: Vec<f64>,
    pub steps: usize,
    pub ended: bool,
}

/// Names accepted by [`make_env`].
pub const ENV_NAMES: [&str; 3] = ["pendulum", "point-mass-gap", "linear"];

pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "point-mass-gap" => Ok(Box::new(PointMassGap::new())),
        "linear" => Ok(Box::new(LinearSystem::scalar(0.9, 0.1, 1.0, 0.0))),
        other => Err(Error::Env(format!(
            "unknown environment {other:?}; expected one of {}",
            ENV_NAMES.join(", ")
        ))),
    }
}

/// Shared episode bookkeeping and action validation.
#[derive(Clone, Debug, Default)]
pub(crate) struct Clock {
    pub steps: usize,
    pub ended: bool,
}

impl Clock {
    pub fn snapshot(&self, values: Vec<f64>) -> EnvSnapshot {
        EnvSnapshot {
            values,
            steps: self.steps,
            ended: self.ended,
        }
    }

    pub fn restore(&mut self, env: &str, snapshot: &EnvSnapshot, width: usize) -> Result<()> {
        if snapshot.values.len() != width {
            return Err(Error::Env(format!("{env}: snapshot has {} values, expected {width}", snapshot.values.len())));
        }
        self.steps = snapshot.steps;
        self.ended = snapshot.ended;
        Ok(())
    }

    pub fn restart(&mut self) {
        self.steps = 0;
        self.ended = false;
    }

    pub fn check(&self, env: &str, action: &[f64], action_dim: usize) -> Result<()> {
        if self.ended {
            return Err(Error::Env(format!("{env}: step after the episode ended")));
        }
        if action.len() != action_dim {
            return Err(Error::Env(format!(
                "{env}: expected {action_dim} action components, got {}",
                action.len()
            )));
        }
        if let Some(a) = action.iter().find(|a| !(a.abs() <= 1.0)) {
            return Err(Error::Env(format!("{env}: action component {a} outside [-1, 1]")));
        }
        Ok(())
    }

    /// Counts a step and returns whether the time limit truncates it.
    pub fn tick(&mut self, done: bool, max_steps: usize) -> bool {
        self.steps += 1;
        let truncated = !done && self.steps >= max_steps;
        self.ended = done || truncated;
        truncated
    }
}
