//! Twin soft Q-functions with EMA targets.
//!
//! Targets are only ever built on constant leaves, so no gradient can reach
//! the target networks through a Bellman target.

use rand::Rng;

use crate::agent::{expand_value, ImaginedModel, TerminalValue};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{ema_update, Activation, Mlp, MlpVars, Module, Param};
use crate::policy::{ActorVars, TanhGaussianActor};

const OUTPUT_SCALE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticEnsemble {
    online: [Mlp; 2],
    target: [Mlp; 2],
    tau: f64,
}

impl CriticEnsemble {
    /// Targets start as exact copies of the online critics.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid("critic", format!("tau {tau} outside (0, 1]")));
        }
        let mut make = |name: &str| {
            Mlp::with_hidden(name, state_dim + action_dim, hidden, hidden_layers, 1, activation, OUTPUT_SCALE, rng)
        };
        let online = [make("critic.q1")?, make("critic.q2")?];
        Ok(Self::from_online(online, tau))
    }

    pub fn from_online(online: [Mlp; 2], tau: f64) -> Self {
        let target = online.clone().map(|mut net| {
            for p in net.params_mut() {
                p.name = p.name.replacen("critic.", "critic_target.", 1);
            }
            net
        });
        CriticEnsemble { online, target, tau }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn online_mut(&mut self) -> &mut [Mlp; 2] {
        &mut self.online
    }

    pub fn target_mut(&mut self) -> &mut [Mlp; 2] {
        &mut self.target
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> CriticVars<'t> {
        CriticVars {
            q: [self.online[0].bind(tape, trainable), self.online[1].bind(tape, trainable)],
        }
    }

    /// Online critics over externally supplied vars in [`Module::params`] order.
    pub fn with_vars<'t>(&self, vars: &[Var<'t>]) -> CriticVars<'t> {
        let n = self.online[0].params().len();
        CriticVars {
            q: [self.online[0].with_vars(&vars[..n]), self.online[1].with_vars(&vars[n..])],
        }
    }

    /// Target critics as constants.
    pub fn bind_target<'t>(&self, tape: &'t Tape) -> CriticVars<'t> {
        CriticVars {
            q: [self.target[0].bind(tape, false), self.target[1].bind(tape, false)],
        }
    }

    pub fn target_params(&self) -> Vec<&Param> {
        self.target.iter().flat_map(|m| m.params()).collect()
    }

    pub fn target_params_mut(&mut self) -> Vec<&mut Param> {
        self.target.iter_mut().flat_map(|m| m.params_mut()).collect()
    }

    /// Online then target parameters.
    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        self.online.iter_mut().chain(self.target.iter_mut()).flat_map(|m| m.params_mut()).collect()
    }

    /// Polyak step of both targets toward the online critics.
    pub fn update_targets(&mut self) -> Result<()> {
        let online: Vec<&Param> = self.online.iter().flat_map(|m| m.params()).collect();
        let target: Vec<&mut Param> = self.target.iter_mut().flat_map(|m| m.params_mut()).collect();
        ema_update(target, online, self.tau)
    }
}

impl Module for CriticEnsemble {
    fn params(&self) -> Vec<&Param> {
        self.online.iter().flat_map(|m| m.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.online.iter_mut().flat_map(|m| m.params_mut()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct CriticVars<'t> {
    q: [MlpVars<'t>; 2],
}

impl<'t> CriticVars<'t> {
    pub fn q_values(&self, x: Var<'t>, u: Var<'t>) -> Result<[Var<'t>; 2]> {
        let xu = x.tape().concat(&[x, u])?;
        Ok([self.q[0].forward(xu)?, self.q[1].forward(xu)?])
    }

    pub fn min_q(&self, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
        let [q1, q2] = self.q_values(x, u)?;
        q1.minimum(q2)
    }

    /// `sum_i mean (Q_i(x, u) - y)^2` against a fixed target `y`.
    pub fn bellman_loss(&self, x: Var<'t>, u: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
        let y = x.tape().constant(target.clone());
        let [q1, q2] = self.q_values(x, u)?;
        q1.sub(y)?.square()?.mean().add(q2.sub(y)?.square()?.mean())
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut v = self.q[0].vars();
        v.extend(self.q[1].vars());
        v
    }
}

impl<'t> TerminalValue<'t> for CriticVars<'t> {
    fn value(&self, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
        self.min_q(x, u)
    }
}

/// `min(Q1, Q2)(x, u) - alpha * log pi(u|x)` for one reparameterized sample,
/// `[batch, 1]`.
pub fn soft_value<'t>(
    critics: &CriticVars<'t>,
    actor: &ActorVars<'t>,
    x: Var<'t>,
    alpha: f64,
    noise: &Tensor,
) -> Result<Var<'t>> {
    let (u, logp) = actor.sample(x, noise)?;
    critics.min_q(x, u)?.sub(logp.scale(alpha))
}

/// `r + gamma * (1 - done) * v_next`, elementwise over `[batch, 1]`.
pub fn bellman_target(rewards: &Tensor, done: &Tensor, next_value: &Tensor, gamma: f64) -> Result<Tensor> {
    if rewards.shape() != done.shape() || rewards.shape() != next_value.shape() {
        return Err(Error::Shape {
            op: "bellman_target",
            lhs: rewards.dims().to_vec(),
            rhs: next_value.dims().to_vec(),
        });
    }
    let data = rewards
        .data()
        .iter()
        .zip(done.data())
        .zip(next_value.data())
        .map(|((r, d), v)| r + gamma * (1.0 - d) * v)
        .collect();
    Tensor::new(rewards.dims().to_vec(), data)
}

/// Single-step soft Bellman target with the target critics.
pub fn soft_bellman_target(
    critics: &CriticEnsemble,
    actor: &TanhGaussianActor,
    next_states: &Tensor,
    rewards: &Tensor,
    done: &Tensor,
    alpha: f64,
    gamma: f64,
    noise: &Tensor,
) -> Result<Tensor> {
    let tape = Tape::new();
    let v = soft_value(
        &critics.bind_target(&tape),
        &actor.bind(&tape, false),
        tape.constant(next_states.clone()),
        alpha,
        noise,
    )?;
    bellman_target(rewards, done, &v.value(), gamma)
}

/// Critic target whose bootstrap is an `horizon`-step imagined expansion from
/// `x'` through the world model, ending in the target critics' soft value.
/// `noises` holds `horizon + 1` action-noise tensors.
#[allow(clippy::too_many_arguments)]
pub fn mve_critic_target<'t, M: ImaginedModel<'t>>(
    tape: &'t Tape,
    critics: &CriticEnsemble,
    model: &M,
    actor: &TanhGaussianActor,
    next_states: &Tensor,
    rewards: &Tensor,
    done: &Tensor,
    alpha: f64,
    gamma: f64,
    horizon: usize,
    noises: &[Tensor],
) -> Result<Tensor> {
    if horizon == 0 {
        return Err(Error::invalid("mve_critic_target", "horizon must be at least 1"));
    }
    let expansion = expand_value(
        tape.constant(next_states.clone()),
        &actor.bind(tape, false),
        model,
        &critics.bind_target(tape),
        alpha,
        gamma,
        horizon,
        noises,
    )?;
    bellman_target(rewards, done, &expansion.value.value(), gamma)
}
