//! Deterministic learned world model.
//!
//! Dynamics are autoregressive and predict state deltas through a GRU:
//!
//! ```text
//! z_t     = f_enc(x_t, u_t)
//! h_{t+1} = GRU(z_t, h_t),   h_1 = 0
//! x_{t+1} = x_t + f_dec(h_{t+1})
//! ```
//!
//! The hidden state only lives for the length of one rollout; it is never
//! carried along real episodes. Reward and termination heads are plain MLPs
//! over `(x, u)`, the latter producing a Bernoulli logit.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, GruStack, GruVars, Mlp, MlpVars, Module, Param};

/// Layer sizes shared by the three heads.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSizes {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    encoder: Mlp,
    core: GruStack,
    decoder: Mlp,
    state_dim: usize,
    action_dim: usize,
}

impl DynamicsModel {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, sizes: ModelSizes, rng: &mut R) -> Result<Self> {
        let encoder = Mlp::with_hidden(
            "dynamics.encoder",
            state_dim + action_dim,
            sizes.hidden,
            sizes.hidden_layers,
            sizes.gru_hidden,
            sizes.activation,
            1.0,
            rng,
        )?;
        let core = GruStack::new("dynamics.gru", sizes.gru_hidden, sizes.gru_hidden, sizes.gru_layers, rng)?;
        let decoder = Mlp::with_hidden(
            "dynamics.decoder",
            sizes.gru_hidden,
            sizes.hidden,
            sizes.hidden_layers,
            state_dim,
            sizes.activation,
            1.0,
            rng,
        )?;
        Ok(DynamicsModel {
            encoder,
            core,
            decoder,
            state_dim,
            action_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> DynamicsVars<'t> {
        DynamicsVars {
            encoder: self.encoder.bind(tape, trainable),
            core: self.core.bind(tape, trainable),
            decoder: self.decoder.bind(tape, trainable),
        }
    }

    pub fn with_vars<'t>(&self, vars: &[Var<'t>]) -> DynamicsVars<'t> {
        let ne = self.encoder.params().len();
        let nc = self.core.params().len();
        DynamicsVars {
            encoder: self.encoder.with_vars(&vars[..ne]),
            core: self.core.with_vars(&vars[ne..ne + nc]),
            decoder: self.decoder.with_vars(&vars[ne + nc..]),
        }
    }
}

impl Module for DynamicsModel {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.core.params());
        p.extend(self.decoder.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.core.params_mut());
        p.extend(self.decoder.params_mut());
        p
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsVars<'t> {
    encoder: MlpVars<'t>,
    core: GruVars<'t>,
    decoder: MlpVars<'t>,
}

impl<'t> DynamicsVars<'t> {
    pub fn initial_state(&self, tape: &'t Tape, batch: usize) -> Vec<Var<'t>> {
        self.core.zero_state(tape, batch)
    }

    /// Predicts the next state and advances `hidden` in place.
    pub fn step(&self, x: Var<'t>, u: Var<'t>, hidden: &mut Vec<Var<'t>>) -> Result<Var<'t>> {
        let z = self.encoder.forward(x.tape().concat(&[x, u])?)?;
        *hidden = self.core.step(z, hidden)?;
        let top = *hidden.last().expect("at least one GRU layer");
        x.add(self.decoder.forward(top)?)
    }

    /// Predicted `x_2 .. x_{k+1}` from `x_1` and `k >= 1` actions, starting
    /// from a zero hidden state.
    pub fn rollout(&self, x1: Var<'t>, actions: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if actions.is_empty() {
            return Err(Error::invalid("rollout", "need at least one action"));
        }
        let mut hidden = self.initial_state(x1.tape(), x1.shape().rows());
        let mut x = x1;
        let mut out = Vec::with_capacity(actions.len());
        for &u in actions {
            x = self.step(x, u, &mut hidden)?;
            out.push(x);
        }
        Ok(out)
    }

    /// Multi-step squared error: batch mean of `sum_t ||x_hat_t - x_t||^2`
    /// over `states = x_1..x_L` and `actions = u_1..u_{L-1}`.
    pub fn loss(&self, tape: &'t Tape, states: &[Tensor], actions: &[Tensor]) -> Result<Var<'t>> {
        if states.len() < 2 {
            return Err(Error::invalid("dynamics_loss", "sequences need at least two states"));
        }
        if actions.len() + 1 != states.len() {
            return Err(Error::invalid(
                "dynamics_loss",
                format!("{} states need {} actions, got {}", states.len(), states.len() - 1, actions.len()),
            ));
        }
        let batch = states[0].shape().rows();
        let x1 = tape.constant(states[0].clone());
        let us: Vec<Var<'t>> = actions.iter().map(|u| tape.constant(u.clone())).collect();
        let preds = self.rollout(x1, &us)?;
        let mut total: Option<Var<'t>> = None;
        for (pred, target) in preds.iter().zip(&states[1..]) {
            let err = pred.sub(tape.constant(target.clone()))?.square()?.sum();
            total = Some(match total {
                Some(t) => t.add(err)?,
                None => err,
            });
        }
        Ok(total.unwrap().scale(1.0 / batch as f64))
    }
}

fn state_action<'t>(x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
    x.tape().concat(&[x, u])
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    net: Mlp,
}

impl RewardModel {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, sizes: ModelSizes, rng: &mut R) -> Result<Self> {
        let net = Mlp::with_hidden(
            "reward",
            state_dim + action_dim,
            sizes.hidden,
            sizes.hidden_layers,
            1,
            sizes.activation,
            1.0,
            rng,
        )?;
        Ok(RewardModel { net })
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> RewardVars<'t> {
        RewardVars(self.net.bind(tape, trainable))
    }

    pub fn with_vars<'t>(&self, vars: &[Var<'t>]) -> RewardVars<'t> {
        RewardVars(self.net.with_vars(vars))
    }
}

impl Module for RewardModel {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

#[derive(Clone, Debug)]
pub struct RewardVars<'t>(MlpVars<'t>);

impl<'t> RewardVars<'t> {
    /// `[batch, 1]` predicted rewards.
    pub fn predict(&self, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
        self.0.forward(state_action(x, u)?)
    }

    /// Mean squared error against observed rewards `[batch, 1]`.
    pub fn loss(&self, x: Var<'t>, u: Var<'t>, rewards: &Tensor) -> Result<Var<'t>> {
        let pred = self.predict(x, u)?;
        Ok(pred.sub(x.tape().constant(rewards.clone()))?.square()?.mean())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerminationModel {
    net: Mlp,
}

impl TerminationModel {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, sizes: ModelSizes, rng: &mut R) -> Result<Self> {
        let net = Mlp::with_hidden(
            "termination",
            state_dim + action_dim,
            sizes.hidden,
            sizes.hidden_layers,
            1,
            sizes.activation,
            1.0,
            rng,
        )?;
        Ok(TerminationModel { net })
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> TerminationVars<'t> {
        TerminationVars(self.net.bind(tape, trainable))
    }

    pub fn with_vars<'t>(&self, vars: &[Var<'t>]) -> TerminationVars<'t> {
        TerminationVars(self.net.with_vars(vars))
    }
}

impl Module for TerminationModel {
    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

#[derive(Clone, Debug)]
pub struct TerminationVars<'t>(MlpVars<'t>);

impl<'t> TerminationVars<'t> {
    pub fn logit(&self, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
        self.0.forward(state_action(x, u)?)
    }

    /// Probability of terminating after `(x, u)`.
    pub fn prob(&self, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
        self.logit(x, u)?.sigmoid()
    }

    /// Bernoulli negative log-likelihood from logits:
    /// `softplus(l) - d * l`, averaged over the batch.
    pub fn loss(&self, x: Var<'t>, u: Var<'t>, done: &Tensor) -> Result<Var<'t>> {
        if let Some(bad) = done.data().iter().find(|&&d| d != 0.0 && d != 1.0) {
            return Err(Error::invalid("termination_loss", format!("label {bad} is not 0 or 1")));
        }
        let l = self.logit(x, u)?;
        let nll = l.softplus()?.sub(l.mul(x.tape().constant(done.clone()))?)?;
        Ok(nll.mean())
    }
}

/// Dynamics, reward and termination models with one optimizer each.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldModel {
    pub dynamics: DynamicsModel,
    pub reward: RewardModel,
    pub termination: TerminationModel,
}

impl WorldModel {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, sizes: ModelSizes, rng: &mut R) -> Result<Self> {
        Ok(WorldModel {
            dynamics: DynamicsModel::new(state_dim, action_dim, sizes, rng)?,
            reward: RewardModel::new(state_dim, action_dim, sizes, rng)?,
            termination: TerminationModel::new(state_dim, action_dim, sizes, rng)?,
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> WorldModelVars<'t> {
        WorldModelVars {
            dynamics: self.dynamics.bind(tape, trainable),
            reward: self.reward.bind(tape, trainable),
            termination: self.termination.bind(tape, trainable),
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorldModelVars<'t> {
    pub dynamics: DynamicsVars<'t>,
    pub reward: RewardVars<'t>,
    pub termination: TerminationVars<'t>,
}

#[cfg(test)]
mod tests;
