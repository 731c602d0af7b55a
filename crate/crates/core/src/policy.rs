//! Tanh-squashed Gaussian actor.
//!
//! `u = tanh(mu(x) + sigma(x) * eps)` with `eps ~ N(0, I)`. The log-density of
//! `u` is the Gaussian density of the pre-squash sample corrected by the
//! Jacobian of `tanh`:
//!
//! ```text
//! log pi(u|x) = sum_i [ -eps_i^2 / 2 - log sigma_i - log(2 pi) / 2 ]
//!             - sum_i log(1 - u_i^2 + 1e-6)
//! ```

use std::f64::consts::PI;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpVars, Module, Param};

/// Actions are kept at least this far inside the `[-1, 1]` box.
pub const ACTION_MARGIN: f64 = 1e-6;
const SQUASH_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TanhGaussianActor {
    trunk: Mlp,
    action_dim: usize,
    log_std_min: f64,
    log_std_max: f64,
}

impl TanhGaussianActor {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        log_std_bounds: (f64, f64),
        rng: &mut R,
    ) -> Result<Self> {
        let trunk = Mlp::with_hidden(
            "actor",
            state_dim,
            hidden,
            hidden_layers,
            2 * action_dim,
            activation,
            1e-2,
            rng,
        )?;
        Self::from_trunk(trunk, action_dim, log_std_bounds)
    }

    pub fn from_trunk(trunk: Mlp, action_dim: usize, (lo, hi): (f64, f64)) -> Result<Self> {
        if trunk.output_width() != 2 * action_dim {
            return Err(Error::invalid(
                "actor",
                format!("trunk emits {} values for {} actions", trunk.output_width(), action_dim),
            ));
        }
        if !(lo < hi) {
            return Err(Error::invalid("actor", format!("log-std bounds [{lo}, {hi}]")));
        }
        Ok(TanhGaussianActor {
            trunk,
            action_dim,
            log_std_min: lo,
            log_std_max: hi,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_width()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn log_std_bounds(&self) -> (f64, f64) {
        (self.log_std_min, self.log_std_max)
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> ActorVars<'t> {
        self.wrap(self.trunk.bind(tape, trainable))
    }

    pub fn with_vars<'t>(&self, vars: &[Var<'t>]) -> ActorVars<'t> {
        self.wrap(self.trunk.with_vars(vars))
    }

    fn wrap<'t>(&self, trunk: MlpVars<'t>) -> ActorVars<'t> {
        ActorVars {
            trunk,
            action_dim: self.action_dim,
            bounds: (self.log_std_min, self.log_std_max),
        }
    }

    /// Deterministic action `tanh(mu(x))` for a single state.
    pub fn mean_action_for(&self, state: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new([1, state.len()], state.to_vec())?);
        Ok(self.bind(&tape, false).mean_action(x)?.value().into_data())
    }

    /// Stochastic action for a single state with the given standard normal noise.
    pub fn sample_for(&self, state: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new([1, state.len()], state.to_vec())?);
        let eps = Tensor::new([1, noise.len()], noise.to_vec())?;
        let (u, _) = self.bind(&tape, false).sample(x, &eps)?;
        Ok(u.value().into_data())
    }
}

impl Module for TanhGaussianActor {
    fn params(&self) -> Vec<&Param> {
        self.trunk.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk.params_mut()
    }
}

#[derive(Clone, Debug)]
pub struct ActorVars<'t> {
    trunk: MlpVars<'t>,
    action_dim: usize,
    bounds: (f64, f64),
}

impl<'t> ActorVars<'t> {
    /// Pre-squash mean and clamped log-std, each `[batch, n]`.
    pub fn distribution(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let out = self.trunk.forward(x)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("actor output".into()));
        }
        let n = self.action_dim;
        let mu = out.slice(0, n)?;
        let log_std = out.slice(n, 2 * n)?.clamp(self.bounds.0, self.bounds.1)?;
        Ok((mu, log_std))
    }

    /// Reparameterized sample and its log-probability (`[batch, 1]`).
    pub fn sample(&self, x: Var<'t>, noise: &Tensor) -> Result<(Var<'t>, Var<'t>)> {
        let (mu, log_std) = self.distribution(x)?;
        let tape = x.tape();
        let mshape = mu.shape();
        if noise.shape() != &mshape {
            return Err(Error::Shape {
                op: "actor.sample",
                lhs: noise.dims().to_vec(),
                rhs: mshape.dims().to_vec(),
            });
        }
        let eps = tape.constant(noise.clone());
        let pre = mu.add(log_std.exp()?.mul(eps)?)?;
        let u = pre.tanh()?.clamp(-1.0 + ACTION_MARGIN, 1.0 - ACTION_MARGIN)?;

        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let sq = noise.map(|e| -0.5 * e * e - half_log_2pi);
        let gaussian = tape.constant(sq).sub(log_std)?.sum_last();
        let squash = u.square()?.rsub_scalar(1.0 + SQUASH_EPS).log()?.sum_last();
        let logp = gaussian.sub(squash)?;
        Ok((u, logp))
    }

    pub fn mean_action(&self, x: Var<'t>) -> Result<Var<'t>> {
        let (mu, _) = self.distribution(x)?;
        mu.tanh()?.clamp(-1.0 + ACTION_MARGIN, 1.0 - ACTION_MARGIN)
    }

    /// Mean of `-log pi(u|x)` over the batch, one sample per state.
    pub fn entropy_estimate(&self, x: Var<'t>, noise: &Tensor) -> Result<f64> {
        if x.shape().rows() == 0 {
            return Err(Error::invalid("entropy_estimate", "empty batch"));
        }
        let (_, logp) = self.sample(x, noise)?;
        Ok(-logp.value().mean())
    }
}
