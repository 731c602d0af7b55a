//! The learned components and one update of each, in the training order:
//! actor, temperature, critics, reward, termination, target EMA; dynamics
//! sequence updates run separately.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{ActorMode, TrainConfig};
use crate::agent::{actor_loss, sac_actor_loss, temperature_loss, Temperature};
use crate::autodiff::{Tape, Tensor, Var};
use crate::critic::{mve_critic_target, soft_bellman_target, CriticEnsemble};
use crate::error::{Error, Result};
use crate::nn::{bind_all, collect_grads, Adam, Module, Param};
use crate::policy::TanhGaussianActor;
use crate::replay::{NormStats, SequenceBatch, StepBatch};
use crate::world_model::{ModelSizes, WorldModel};

/// Which target the critic regressed onto.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CriticTarget {
    Bellman,
    Expansion { horizon: usize },
}

/// One recorded update, for auditing the update order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateEvent {
    Actor { mode: ActorMode, horizon: usize },
    Temperature,
    Critic(CriticTarget),
    Reward,
    Termination,
    TargetEma,
    Dynamics,
}

/// Scalar diagnostics of one single-step update round.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepStats {
    pub actor: f64,
    pub temperature: f64,
    pub critic: f64,
    pub reward: Option<f64>,
    pub termination: Option<f64>,
    pub entropy: f64,
}

/// Every trainable component with its optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    pub actor: TanhGaussianActor,
    pub critics: CriticEnsemble,
    pub world: WorldModel,
    pub temperature: Temperature,
    pub(crate) optimizers: Optimizers,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
    pub temperature: Adam,
    pub dynamics: Adam,
    pub reward: Adam,
    pub termination: Adam,
}

impl Optimizers {
    pub fn named(&self) -> [(&'static str, &Adam); 6] {
        [
            ("actor", &self.actor),
            ("critic", &self.critic),
            ("temperature", &self.temperature),
            ("dynamics", &self.dynamics),
            ("reward", &self.reward),
            ("termination", &self.termination),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Adam); 6] {
        [
            ("actor", &mut self.actor),
            ("critic", &mut self.critic),
            ("temperature", &mut self.temperature),
            ("dynamics", &mut self.dynamics),
            ("reward", &mut self.reward),
            ("termination", &mut self.termination),
        ]
    }
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    Tensor::new([rows, cols], (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
        .expect("positive dims")
}

fn finite(v: Var<'_>, what: &str) -> Result<f64> {
    let x = v.item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{what} loss")))
    }
}

/// One Adam step on `module` against `loss`, which rebuilds the module from
/// its tracked parameter variables.
pub(crate) fn descend<M: Module>(
    module: &mut M,
    opt: &mut Adam,
    what: &str,
    loss: impl for<'t> FnOnce(&M, &'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
) -> Result<f64> {
    let tape = Tape::new();
    let vars = bind_all(&module.params(), &tape, true);
    let l = loss(module, &tape, &vars)?;
    let value = finite(l, what)?;
    l.backward()?;
    let mut grads = collect_grads(&vars);
    opt.step(module.params_mut(), &mut grads)?;
    Ok(value)
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(config: &TrainConfig, state_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        let actor = TanhGaussianActor::new(
            state_dim,
            action_dim,
            config.actor_hidden,
            config.actor_layers,
            config.activation,
            (config.log_std_min, config.log_std_max),
            rng,
        )?;
        let critics = CriticEnsemble::new(
            state_dim,
            action_dim,
            config.critic_hidden,
            config.critic_layers,
            config.activation,
            config.tau,
            rng,
        )?;
        let sizes = ModelSizes {
            hidden: config.model_hidden,
            hidden_layers: config.model_layers,
            gru_hidden: config.gru_hidden,
            gru_layers: config.gru_layers,
            activation: config.activation,
        };
        let world = WorldModel::new(state_dim, action_dim, sizes, rng)?;
        Ok(Learner {
            actor,
            critics,
            world,
            temperature: Temperature::new(config.init_temperature)?,
            optimizers: Optimizers {
                actor: Adam::new(config.actor_lr),
                critic: Adam::new(config.critic_lr),
                temperature: Adam::new(config.temperature_lr),
                dynamics: Adam::new(config.model_lr),
                reward: Adam::new(config.model_lr),
                termination: Adam::new(config.model_lr),
            },
        })
    }

    /// Every parameter, including critic targets and the temperature, in a
    /// fixed order with unique names.
    pub fn all_params(&self) -> Vec<&Param> {
        let mut p = self.actor.params();
        p.extend(self.critics.params());
        p.extend(self.critics.target_params());
        p.extend(self.world.dynamics.params());
        p.extend(self.world.reward.params());
        p.extend(self.world.termination.params());
        p.push(&self.temperature.log_alpha);
        p
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.actor.params_mut();
        p.extend(self.critics.all_params_mut());
        p.extend(self.world.dynamics.params_mut());
        p.extend(self.world.reward.params_mut());
        p.extend(self.world.termination.params_mut());
        p.push(&mut self.temperature.log_alpha);
        p
    }

    /// The world model used for imagination: the learned one, or a copy
    /// whose dynamics parameters carry additive Gaussian noise.
    fn imagination_model<R: Rng + ?Sized>(&self, noise: f64, rng: &mut R) -> WorldModel {
        let mut model = self.world.clone();
        if noise > 0.0 {
            for p in model.dynamics.params_mut() {
                for v in p.value.data_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *v += noise * e;
                }
            }
        }
        model
    }

    /// One round of single-step updates on `batch`. States are normalized
    /// with `stats`; `noise_rng` supplies every policy sample and
    /// `corruption_rng` the optional imagination-model noise.
    #[allow(clippy::too_many_arguments)]
    pub fn step_update<R: Rng + ?Sized, C: Rng + ?Sized>(
        &mut self,
        config: &TrainConfig,
        batch: &StepBatch,
        stats: &NormStats,
        target_entropy: f64,
        noise_rng: &mut R,
        corruption_rng: &mut C,
        mut trace: Option<&mut Vec<UpdateEvent>>,
    ) -> Result<StepStats> {
        let mut record = |e: UpdateEvent| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(e);
            }
        };
        let rows = batch.states.shape().rows();
        let n = self.actor.action_dim();
        let h = config.horizon;
        let x = stats.normalize_tensor(&batch.states);
        let x_next = stats.normalize_tensor(&batch.next_states);
        let imagined = if config.uses_model() && config.model_noise > 0.0 {
            Some(self.imagination_model(config.model_noise, corruption_rng))
        } else {
            None
        };
        let model = imagined.as_ref().unwrap_or(&self.world);
        let actor_horizon = if config.actor_mode == ActorMode::Svg { h } else { 0 };
        let actor_noise: Vec<Tensor> = (0..=actor_horizon).map(|_| standard_normal(noise_rng, rows, n)).collect();
        let critic_horizon = if config.critic_mve { h } else { 0 };
        let critic_noise: Vec<Tensor> = (0..=critic_horizon).map(|_| standard_normal(noise_rng, rows, n)).collect();

        // Actor.
        let alpha = self.temperature.alpha();
        let (gamma, mode) = (config.gamma, config.actor_mode);
        let critics = &self.critics;
        let mut log_probs = None;
        let actor_value = descend(&mut self.actor, &mut self.optimizers.actor, "actor", |module, tape, vars| {
            let actor = module.with_vars(vars);
            let xs = tape.constant(x.clone());
            let q = critics.bind(tape, false);
            let (loss, logp) = match mode {
                ActorMode::Svg => {
                    let wm = model.bind(tape, false);
                    let (loss, e) = actor_loss(xs, &actor, &wm, &q, alpha, gamma, h, &actor_noise)?;
                    (loss, e.log_probs[0])
                }
                ActorMode::ModelFree => sac_actor_loss(xs, &actor, &q, alpha, &actor_noise[0])?,
            };
            log_probs = Some(logp.value());
            Ok(loss)
        })?;
        record(UpdateEvent::Actor { mode, horizon: actor_horizon });
        let log_probs = log_probs.expect("actor loss ran");
        let entropy = -log_probs.mean();

        // Temperature.
        let temp_value = descend(
            &mut self.temperature,
            &mut self.optimizers.temperature,
            "temperature",
            |_, _, vars| temperature_loss(vars[0], &log_probs, target_entropy),
        )?;
        record(UpdateEvent::Temperature);

        // Critics, against targets from the updated actor and temperature.
        let alpha = self.temperature.alpha();
        let (y, kind) = if config.critic_mve {
            let tape = Tape::new();
            let y = mve_critic_target(
                &tape,
                &self.critics,
                &model.bind(&tape, false),
                &self.actor,
                &x_next,
                &batch.rewards,
                &batch.done,
                alpha,
                gamma,
                h,
                &critic_noise,
            )?;
            (y, CriticTarget::Expansion { horizon: h })
        } else {
            let y = soft_bellman_target(
                &self.critics,
                &self.actor,
                &x_next,
                &batch.rewards,
                &batch.done,
                alpha,
                gamma,
                &critic_noise[0],
            )?;
            (y, CriticTarget::Bellman)
        };
        let critic_value = descend(&mut self.critics, &mut self.optimizers.critic, "critic", |module, tape, vars| {
            module
                .with_vars(vars)
                .bellman_loss(tape.constant(x.clone()), tape.constant(batch.actions.clone()), &y)
        })?;
        record(UpdateEvent::Critic(kind));

        let mut out = StepStats {
            actor: actor_value,
            temperature: temp_value,
            critic: critic_value,
            reward: None,
            termination: None,
            entropy,
        };

        if config.uses_model() {
            out.reward = Some(descend(
                &mut self.world.reward,
                &mut self.optimizers.reward,
                "reward",
                |module, tape, vars| {
                    module.with_vars(vars).loss(
                        tape.constant(x.clone()),
                        tape.constant(batch.actions.clone()),
                        &batch.rewards,
                    )
                },
            )?);
            record(UpdateEvent::Reward);

            // Time-limit truncations carry no termination label.
            let keep: Vec<usize> = (0..rows).filter(|&i| batch.truncated.data()[i] == 0.0).collect();
            if !keep.is_empty() {
                let xs = x.select_rows(&keep);
                let us = batch.actions.select_rows(&keep);
                let ds = batch.done.select_rows(&keep);
                out.termination = Some(descend(
                    &mut self.world.termination,
                    &mut self.optimizers.termination,
                    "termination",
                    |module, tape, vars| {
                        module
                            .with_vars(vars)
                            .loss(tape.constant(xs.clone()), tape.constant(us.clone()), &ds)
                    },
                )?);
                record(UpdateEvent::Termination);
            }
        }

        self.critics.update_targets()?;
        record(UpdateEvent::TargetEma);
        Ok(out)
    }

    /// One multi-step dynamics update on normalized sequences.
    pub fn dynamics_update(&mut self, batch: &SequenceBatch, stats: &NormStats) -> Result<f64> {
        let states: Vec<Tensor> = batch.states.iter().map(|s| stats.normalize_tensor(s)).collect();
        descend(&mut self.world.dynamics, &mut self.optimizers.dynamics, "dynamics", |module, tape, vars| {
            module.with_vars(vars).loss(tape, &states, &batch.actions)
        })
    }

    /// Per-element squared error of open-loop model predictions over a
    /// batch of sequences, in normalized space.
    pub fn model_mse(&self, batch: &SequenceBatch, stats: &NormStats) -> Result<f64> {
        let states: Vec<Tensor> = batch.states.iter().map(|s| stats.normalize_tensor(s)).collect();
        let tape = Tape::new();
        let preds = self.world.dynamics.bind(&tape, false).rollout(
            tape.constant(states[0].clone()),
            &batch.actions.iter().map(|u| tape.constant(u.clone())).collect::<Vec<_>>(),
        )?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (p, target) in preds.iter().zip(&states[1..]) {
            for (a, b) in p.value().data().iter().zip(target.data()) {
                sum += (a - b) * (a - b);
                count += 1;
            }
        }
        Ok(sum / count as f64)
    }
}
