//! The SVG(H) actor objective and its supporting pieces.
//!
//! [`expand_value`] rolls the policy through a model for `H` imagined steps:
//!
//! ```text
//! V = sum_{t<H} gamma^t s_t (r(x_t, u_t) - alpha log pi(u_t|x_t))
//!     + gamma^H s_H (min Q(x_H, u_H) - alpha log pi(u_H|x_H))
//! s_0 = 1,  s_{t+1} = s_t (1 - d(x_t, u_t))
//! ```
//!
//! With `H = 0` this is exactly the soft value of the current state, which is
//! how the actor loss degenerates to the model-free one.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::critic::CriticVars;
use crate::error::{Error, Result};
use crate::nn::{Module, Param};
use crate::policy::ActorVars;
use crate::world_model::WorldModelVars;

/// A reparameterized stochastic policy on a tape.
pub trait ImaginedPolicy<'t> {
    /// Action and its log-probability (`[batch, 1]`) for fixed noise.
    fn sample(&self, x: Var<'t>, noise: &Tensor) -> Result<(Var<'t>, Var<'t>)>;
}

impl<'t> ImaginedPolicy<'t> for ActorVars<'t> {
    fn sample(&self, x: Var<'t>, noise: &Tensor) -> Result<(Var<'t>, Var<'t>)> {
        ActorVars::sample(self, x, noise)
    }
}

/// A differentiable model of dynamics, reward and termination.
pub trait ImaginedModel<'t> {
    fn initial_state(&self, tape: &'t Tape, batch: usize) -> Vec<Var<'t>>;

    /// Next state; advances the recurrent state in place.
    fn step(&self, x: Var<'t>, u: Var<'t>, hidden: &mut Vec<Var<'t>>) -> Result<Var<'t>>;

    /// `[batch, 1]` reward of taking `u` in `x`.
    fn reward(&self, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>>;

    /// `[batch, 1]` termination probability, or `None` if the model never
    /// terminates.
    fn termination(&self, x: Var<'t>, u: Var<'t>) -> Result<Option<Var<'t>>>;
}

impl<'t> ImaginedModel<'t> for WorldModelVars<'t> {
    fn initial_state(&self, tape: &'t Tape, batch: usize) -> Vec<Var<'t>> {
        self.dynamics.initial_state(tape, batch)
    }

    fn step(&self, x: Var<'t>, u: Var<'t>, hidden: &mut Vec<Var<'t>>) -> Result<Var<'t>> {
        self.dynamics.step(x, u, hidden)
    }

    fn reward(&self, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
        self.reward.predict(x, u)
    }

    fn termination(&self, x: Var<'t>, u: Var<'t>) -> Result<Option<Var<'t>>> {
        self.termination.prob(x, u).map(Some)
    }
}

/// Value that closes an expansion, typically the twin-critic minimum.
pub trait TerminalValue<'t> {
    fn value(&self, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>>;
}

/// Terminal value that is identically zero, turning an expansion into a plain
/// finite-horizon return.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroValue;

impl<'t> TerminalValue<'t> for ZeroValue {
    fn value(&self, x: Var<'t>, _u: Var<'t>) -> Result<Var<'t>> {
        Ok(x.tape().constant(Tensor::zeros([x.shape().rows(), 1])))
    }
}

/// Result of [`expand_value`].
#[derive(Clone, Debug)]
pub struct Expansion<'t> {
    /// `[batch, 1]` expanded value per start state.
    pub value: Var<'t>,
    /// Survival weights `s_0 ..= s_H`, each `[batch, 1]`.
    pub survival: Vec<Tensor>,
    /// Log-probabilities of the imagined actions `u_0 ..= u_H`.
    pub log_probs: Vec<Var<'t>>,
}

fn ensure_finite(v: Var<'_>, what: &str, step: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at expansion step {step}")))
    }
}

/// Entropy-regularized `horizon`-step value expansion. `noises` supplies one
/// `[batch, n]` standard-normal tensor per imagined action, `horizon + 1` in
/// total.
#[allow(clippy::too_many_arguments)]
pub fn expand_value<'t, P, M, V>(
    x: Var<'t>,
    policy: &P,
    model: &M,
    terminal: &V,
    alpha: f64,
    gamma: f64,
    horizon: usize,
    noises: &[Tensor],
) -> Result<Expansion<'t>>
where
    P: ImaginedPolicy<'t>,
    M: ImaginedModel<'t>,
    V: TerminalValue<'t>,
{
    if noises.len() != horizon + 1 {
        return Err(Error::invalid(
            "expand_value",
            format!("horizon {horizon} needs {} noise tensors, got {}", horizon + 1, noises.len()),
        ));
    }
    let tape = x.tape();
    let batch = x.shape().rows();
    let mut hidden = if horizon > 0 { model.initial_state(tape, batch) } else { Vec::new() };
    let mut state = x;
    let mut survival: Option<Var<'t>> = None;
    let mut survival_trace = vec![Tensor::full([batch, 1], 1.0)];
    let mut log_probs = Vec::with_capacity(horizon + 1);
    let mut total: Option<Var<'t>> = None;
    let mut discount = 1.0;
    let weight = |term: Var<'t>, survival: Option<Var<'t>>, discount: f64| -> Result<Var<'t>> {
        let term = match survival {
            Some(s) => term.mul(s)?,
            None => term,
        };
        Ok(if discount == 1.0 { term } else { term.scale(discount) })
    };

    for t in 0..horizon {
        let (u, logp) = policy.sample(state, &noises[t])?;
        ensure_finite(logp, "log-probability", t)?;
        log_probs.push(logp);
        let r = model.reward(state, u)?;
        ensure_finite(r, "reward", t)?;
        let term = weight(r.sub(logp.scale(alpha))?, survival, discount)?;
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
        if let Some(d) = model.termination(state, u)? {
            ensure_finite(d, "termination", t)?;
            let keep = d.rsub_scalar(1.0);
            survival = Some(match survival {
                Some(s) => s.mul(keep)?,
                None => keep,
            });
        }
        survival_trace.push(match survival {
            Some(s) => s.value(),
            None => Tensor::full([batch, 1], 1.0),
        });
        state = model.step(state, u, &mut hidden)?;
        ensure_finite(state, "state", t + 1)?;
        discount *= gamma;
    }

    let (u, logp) = policy.sample(state, &noises[horizon])?;
    ensure_finite(logp, "log-probability", horizon)?;
    log_probs.push(logp);
    let q = terminal.value(state, u)?;
    ensure_finite(q, "terminal value", horizon)?;
    let term = weight(q.sub(logp.scale(alpha))?, survival, discount)?;
    let value = match total {
        Some(acc) => acc.add(term)?,
        None => term,
    };
    Ok(Expansion {
        value,
        survival: survival_trace,
        log_probs,
    })
}

/// Mean negative expanded value over the batch of start states. Only the
/// actor should be bound as trainable; the model and critics enter as
/// constants so their functions, not their parameters, carry the gradient.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss<'t, M: ImaginedModel<'t>>(
    x: Var<'t>,
    actor: &ActorVars<'t>,
    model: &M,
    critics: &CriticVars<'t>,
    alpha: f64,
    gamma: f64,
    horizon: usize,
    noises: &[Tensor],
) -> Result<(Var<'t>, Expansion<'t>)> {
    let expansion = expand_value(x, actor, model, critics, alpha, gamma, horizon, noises)?;
    Ok((expansion.value.neg().mean(), expansion))
}

/// The model-free soft actor objective `mean(alpha log pi(u|x) - min Q(x, u))`.
pub fn sac_actor_loss<'t>(
    x: Var<'t>,
    actor: &ActorVars<'t>,
    critics: &CriticVars<'t>,
    alpha: f64,
    noise: &Tensor,
) -> Result<(Var<'t>, Var<'t>)> {
    let (u, logp) = actor.sample(x, noise)?;
    let q = critics.min_q(x, u)?;
    Ok((logp.scale(alpha).sub(q)?.mean(), logp))
}

/// `mean(-alpha (log pi + target))` with `alpha = exp(log_alpha)`; `log_probs`
/// are treated as constants.
pub fn temperature_loss<'t>(log_alpha: Var<'t>, log_probs: &Tensor, target_entropy: f64) -> Result<Var<'t>> {
    let shifted = log_probs.map(|l| l + target_entropy);
    let alpha = log_alpha.exp()?;
    Ok(log_alpha.tape().constant(shifted).mul(alpha)?.mean().neg())
}

/// Learned temperature stored as `log alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct Temperature {
    pub log_alpha: Param,
}

impl Temperature {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("temperature", format!("alpha {alpha} must be positive")));
        }
        Ok(Temperature {
            log_alpha: Param::new("log_alpha", Tensor::scalar(alpha.ln())),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.value.item().exp()
    }
}

impl Module for Temperature {
    fn params(&self) -> Vec<&Param> {
        vec![&self.log_alpha]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.log_alpha]
    }
}

/// Exponentially decaying target entropy
/// `(init - final) (1 - t/T)^beta + final`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropySchedule {
    pub init: f64,
    #[serde(rename = "final")]
    pub final_: f64,
    pub beta: f64,
    pub total: u64,
}

impl EntropySchedule {
    pub fn new(init: f64, final_: f64, beta: f64, total: u64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid("entropy_schedule", format!("decay exponent {beta} must be positive")));
        }
        if total == 0 {
            return Err(Error::invalid("entropy_schedule", "total timesteps must be positive"));
        }
        if !init.is_finite() || !final_.is_finite() {
            return Err(Error::invalid("entropy_schedule", "entropies must be finite"));
        }
        Ok(EntropySchedule { init, final_, beta, total })
    }

    /// Target entropy at timestep `t`, `0 <= t <= T`.
    pub fn target_entropy(&self, t: u64) -> Result<f64> {
        if t > self.total {
            return Err(Error::invalid(
                "target_entropy",
                format!("timestep {t} beyond schedule length {}", self.total),
            ));
        }
        if t == 0 {
            return Ok(self.init);
        }
        let w = (1.0 - t as f64 / self.total as f64).powf(self.beta);
        let v = (self.init - self.final_) * w + self.final_;
        // The formula lies between the endpoints; rounding can leave it an ulp outside.
        Ok(v.clamp(self.init.min(self.final_), self.init.max(self.final_)))
    }
}

/// Horizon, discount and temperature settings of the actor update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvgConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub init_temperature: f64,
    pub temperature_lr: f64,
}

impl Default for SvgConfig {
    fn default() -> Self {
        SvgConfig {
            horizon: 2,
            gamma: 0.99,
            init_temperature: 0.1,
            temperature_lr: 5e-4,
        }
    }
}
