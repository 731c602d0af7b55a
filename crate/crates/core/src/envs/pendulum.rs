use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Clock, Env, EnvSnapshot, Step};
use crate::error::{Error, Result};

/// Torque-limited pendulum swing-up. The angle is measured from upright and
/// observed as `(cos theta, sin theta, theta_dot)`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    theta: f64,
    theta_dot: f64,
    clock: Clock,
}

impl Pendulum {
    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_TORQUE: f64 = 2.0;
    /// Angular speed is clipped to this magnitude after every step.
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_STEPS: usize = 200;

    pub fn new() -> Self {
        Pendulum {
            theta: PI,
            theta_dot: 0.0,
            clock: Clock::default(),
        }
    }

    pub fn angle(&self) -> f64 {
        self.theta
    }

    pub fn angular_velocity(&self) -> f64 {
        self.theta_dot
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

/// Wraps an angle into `[-pi, pi)`.
fn wrap(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

impl Env for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        Self::MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.clock.restart();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        self.clock.check("pendulum", action, 1)?;
        let torque = Self::MAX_TORQUE * action[0];
        let th = wrap(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * torque * torque);

        let accel = 3.0 * Self::GRAVITY / (2.0 * Self::LENGTH) * self.theta.sin()
            + 3.0 / (Self::MASS * Self::LENGTH * Self::LENGTH) * torque;
        // Semi-implicit Euler: the new velocity drives the position update.
        self.theta_dot = (self.theta_dot + accel * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.theta += self.theta_dot * Self::DT;

        let truncated = self.clock.tick(false, Self::MAX_STEPS);
        Ok(Step {
            next_state: self.observation(),
            reward,
            done: false,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    fn set_state(&mut self, observation: &[f64]) -> Result<()> {
        if observation.len() != 3 || observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Env(format!("pendulum: bad state {observation:?}")));
        }
        self.theta = observation[1].atan2(observation[0]);
        self.theta_dot = observation[2].clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        self.clock.restart();
        Ok(())
    }

    fn save(&self) -> EnvSnapshot {
        self.clock.snapshot(vec![self.theta, self.theta_dot])
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()> {
        self.clock.restore("pendulum", snapshot, 2)?;
        self.theta = snapshot.values[0];
        self.theta_dot = snapshot.values[1];
        Ok(())
    }
}
