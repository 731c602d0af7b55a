use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Clock, Env, EnvSnapshot, Step};
use crate::error::{Error, Result};

/// A damped 2-D point mass rewarded for moving right, with a rectangular
/// hazard in its path. Entering the hazard ends the episode.
///
/// State is `(px, py, vx, vy)`; actions are accelerations in `[-1, 1]^2`.
#[derive(Clone, Debug)]
pub struct PointMassGap {
    state: [f64; 4],
    clock: Clock,
}

impl PointMassGap {
    pub const DT: f64 = 0.1;
    pub const DAMPING: f64 = 0.95;
    pub const MAX_STEPS: usize = 300;
    /// `(x_min, x_max, y_min, y_max)` of the hazard.
    pub const HAZARD: (f64, f64, f64, f64) = (1.0, 1.5, -0.6, 0.6);
    /// Vertical positions are confined to `[-WALL, WALL]`.
    pub const WALL: f64 = 2.0;

    pub fn new() -> Self {
        PointMassGap {
            state: [0.0; 4],
            clock: Clock::default(),
        }
    }

    pub fn in_hazard(px: f64, py: f64) -> bool {
        let (x0, x1, y0, y1) = Self::HAZARD;
        (x0..=x1).contains(&px) && (y0..=y1).contains(&py)
    }
}

impl Default for PointMassGap {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for PointMassGap {
    fn name(&self) -> &'static str {
        "point-mass-gap"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        Self::MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0, 0.0];
        self.clock.restart();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        self.clock.check("point-mass-gap", action, 2)?;
        let [px, py, vx, vy] = self.state;
        let vx2 = Self::DAMPING * vx + Self::DT * action[0];
        let vy2 = Self::DAMPING * vy + Self::DT * action[1];
        let px2 = px + Self::DT * vx2;
        let py2 = (py + Self::DT * vy2).clamp(-Self::WALL, Self::WALL);
        let vy2 = if py2.abs() == Self::WALL { 0.0 } else { vy2 };
        self.state = [px2, py2, vx2, vy2];
        let done = Self::in_hazard(px, py) || Self::in_hazard(px2, py2);
        let truncated = self.clock.tick(done, Self::MAX_STEPS);
        Ok(Step {
            next_state: self.observation(),
            reward: 10.0 * (px2 - px),
            done,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn set_state(&mut self, observation: &[f64]) -> Result<()> {
        if observation.len() != 4 || observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Env(format!("point-mass-gap: bad state {observation:?}")));
        }
        self.state.copy_from_slice(observation);
        self.clock.restart();
        Ok(())
    }

    fn save(&self) -> EnvSnapshot {
        self.clock.snapshot(self.state.to_vec())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()> {
        self.clock.restore("point-mass-gap", snapshot, 4)?;
        self.state.copy_from_slice(&snapshot.values);
        Ok(())
    }
}
