use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::eval::{evaluate_policy, EvalSummary};
use super::learner::{Learner, UpdateEvent};
use super::metrics::{Accumulator, MetricsRow, MetricsWriter, Stat};
use crate::agent::EntropySchedule;
use crate::envs::{make_env, Env};
use crate::error::{Error, Result};
use crate::replay::{EpisodeBuffer, NormStats, Normalizer, Transition};

/// Independent random streams, one per consumer, so that the draws of one
/// never shift another's.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Streams {
    pub env: ChaCha8Rng,
    pub action: ChaCha8Rng,
    pub step_batch: ChaCha8Rng,
    pub seq_batch: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub validation: ChaCha8Rng,
    pub corruption: ChaCha8Rng,
    pub eval: ChaCha8Rng,
}

pub(crate) const STREAM_NAMES: [&str; 8] = [
    "env",
    "action",
    "step_batch",
    "seq_batch",
    "noise",
    "validation",
    "corruption",
    "eval",
];

/// Stream used only while constructing the networks.
const INIT_STREAM: u64 = 0;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            env: stream(seed, 1),
            action: stream(seed, 2),
            step_batch: stream(seed, 3),
            seq_batch: stream(seed, 4),
            noise: stream(seed, 5),
            validation: stream(seed, 6),
            corruption: stream(seed, 7),
            eval: stream(seed, 8),
        }
    }

    pub fn all(&self) -> [&ChaCha8Rng; 8] {
        [
            &self.env,
            &self.action,
            &self.step_batch,
            &self.seq_batch,
            &self.noise,
            &self.validation,
            &self.corruption,
            &self.eval,
        ]
    }

    pub fn all_mut(&mut self) -> [&mut ChaCha8Rng; 8] {
        [
            &mut self.env,
            &mut self.action,
            &mut self.step_batch,
            &mut self.seq_batch,
            &mut self.noise,
            &mut self.validation,
            &mut self.corruption,
            &mut self.eval,
        ]
    }
}

/// The complete mutable state of a training run.
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) schedule: EntropySchedule,
    pub(crate) learner: Learner,
    pub(crate) env: Box<dyn Env>,
    pub(crate) buffer: EpisodeBuffer,
    pub(crate) normalizer: Normalizer,
    pub(crate) streams: Streams,
    pub(crate) t: u64,
    pub(crate) episodes: u64,
    pub(crate) obs: Vec<f64>,
    pub(crate) episode_return: f64,
    pub(crate) violations: u64,
    pub(crate) acc: Accumulator,
    trace: Option<Vec<UpdateEvent>>,
    parallel_eval: bool,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut env = make_env(&config.env)?;
        let (m, n) = (env.state_dim(), env.action_dim());
        let learner = Learner::new(&config, m, n, &mut stream(config.seed, INIT_STREAM))?;
        let mut streams = Streams::new(config.seed);
        let obs = env.reset(streams.env.random());
        let mut normalizer = Normalizer::new(m, config.norm_floor)?;
        normalizer.update(&obs);
        Ok(Trainer {
            schedule: config.schedule()?,
            buffer: EpisodeBuffer::new(m, n, config.replay_capacity)?,
            config,
            learner,
            env,
            normalizer,
            streams,
            t: 0,
            episodes: 0,
            obs,
            episode_return: 0.0,
            violations: 0,
            acc: Accumulator::default(),
            trace: None,
            parallel_eval: false,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn buffer(&self) -> &EpisodeBuffer {
        &self.buffer
    }

    /// Completed environment steps.
    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Sampled sequences that failed the replay audit so far.
    pub fn sequence_violations(&self) -> u64 {
        self.violations
    }

    pub fn norm_stats(&self) -> NormStats {
        self.normalizer.stats()
    }

    /// Starts recording every update in order.
    pub fn record_updates(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn update_trace(&self) -> Option<&[UpdateEvent]> {
        self.trace.as_deref()
    }

    /// Runs evaluation episodes on threads. Training results do not depend
    /// on this setting.
    pub fn set_parallel_eval(&mut self, parallel: bool) {
        self.parallel_eval = parallel;
    }

    /// Whether a metrics row is due after `self.t` steps.
    fn row_due(&self) -> bool {
        self.t == 0 || self.t % self.config.eval_interval == 0 || self.t == self.config.steps
    }

    /// One environment step followed by the scheduled updates.
    pub fn step(&mut self) -> Result<()> {
        let n = self.env.action_dim();
        let action: Vec<f64> = if self.t < self.config.warmup_steps {
            (0..n).map(|_| self.streams.action.random_range(-1.0..=1.0)).collect()
        } else {
            let noise: Vec<f64> = (0..n).map(|_| self.streams.action.sample(StandardNormal)).collect();
            self.learner.actor.sample_for(&self.normalizer.stats().normalize(&self.obs), &noise)?
        };
        let step = self.env.step(&action)?;
        self.normalizer.update(&step.next_state);
        self.episode_return += step.reward;
        self.buffer.push(Transition {
            state: std::mem::take(&mut self.obs),
            action,
            reward: step.reward,
            next_state: step.next_state.clone(),
            done: step.done,
            truncated: step.truncated,
        })?;
        self.t += 1;
        if step.done || step.truncated {
            self.episodes += 1;
            self.acc.episode_finished(self.episode_return);
            self.episode_return = 0.0;
            self.obs = self.env.reset(self.streams.env.random());
            self.normalizer.update(&self.obs);
        } else {
            self.obs = step.next_state;
        }
        if self.t > self.config.warmup_steps {
            self.update()?;
        }
        Ok(())
    }

    fn update(&mut self) -> Result<()> {
        let stats = self.normalizer.stats();
        let target = self.schedule.target_entropy(self.t)?;
        for _ in 0..self.config.step_updates {
            let batch = self.buffer.sample_steps(self.config.step_batch, &mut self.streams.step_batch)?;
            let s = self.learner.step_update(
                &self.config,
                &batch,
                &stats,
                target,
                &mut self.streams.noise,
                &mut self.streams.corruption,
                self.trace.as_mut(),
            )?;
            self.acc.add(Stat::Actor, s.actor);
            self.acc.add(Stat::Temperature, s.temperature);
            self.acc.add(Stat::Critic, s.critic);
            self.acc.add(Stat::Entropy, s.entropy);
            if let Some(r) = s.reward {
                self.acc.add(Stat::Reward, r);
            }
            if let Some(d) = s.termination {
                self.acc.add(Stat::Termination, d);
            }
        }
        if !self.config.uses_model() {
            return Ok(());
        }
        let len = self.config.sequence_length();
        if self.buffer.sequence_starts(len) == 0 {
            return Ok(());
        }
        for _ in 0..self.config.seq_updates {
            let batch = self.buffer.sample_sequences(self.config.seq_batch, len, &mut self.streams.seq_batch)?;
            self.violations += self.buffer.audit_sequences(&batch) as u64;
            let loss = self.learner.dynamics_update(&batch, &stats)?;
            self.acc.add(Stat::Dynamics, loss);
            if let Some(t) = self.trace.as_mut() {
                t.push(UpdateEvent::Dynamics);
            }
        }
        Ok(())
    }

    /// Deterministic evaluation of the current policy on fresh seeds.
    pub fn evaluate_now(&mut self) -> Result<EvalSummary> {
        let seeds: Vec<u64> = (0..self.config.eval_episodes).map(|_| self.streams.eval.random()).collect();
        evaluate_policy(
            &self.learner.actor,
            &self.normalizer.stats(),
            &self.config.env,
            &seeds,
            self.parallel_eval,
        )
    }

    /// Open-loop `val_steps`-step model error on fresh replay sequences.
    fn validation_mse(&mut self) -> Result<Option<f64>> {
        let len = self.config.val_steps;
        if !self.config.uses_model() || len == 0 || self.buffer.sequence_starts(len) == 0 {
            return Ok(None);
        }
        let batch = self.buffer.sample_sequences(self.config.val_batch, len, &mut self.streams.validation)?;
        self.violations += self.buffer.audit_sequences(&batch) as u64;
        self.learner.model_mse(&batch, &self.normalizer.stats()).map(Some)
    }

    /// Closes the current logging interval.
    pub fn log_row(&mut self) -> Result<MetricsRow> {
        let eval = self.evaluate_now()?;
        let model_mse = self.validation_mse()?;
        let acc = std::mem::take(&mut self.acc);
        Ok(MetricsRow {
            timestep: self.t,
            episodes: self.episodes,
            train_return: acc.train_return(),
            eval_return: eval.mean,
            eval_return_std: eval.std,
            critic_loss: acc.mean(Stat::Critic),
            actor_loss: acc.mean(Stat::Actor),
            temperature_loss: acc.mean(Stat::Temperature),
            dynamics_loss: acc.mean(Stat::Dynamics),
            reward_loss: acc.mean(Stat::Reward),
            termination_loss: acc.mean(Stat::Termination),
            alpha: self.learner.temperature.alpha(),
            entropy: acc.mean(Stat::Entropy),
            target_entropy: self.schedule.target_entropy(self.t)?,
            model_mse,
            sequence_violations: self.violations,
        })
    }

    /// Trains until `config.steps`, logging a row at step 0, every
    /// evaluation interval and at the end. With `out_dir`, rows go to the
    /// metrics files there (appended when resuming) and checkpoints are
    /// written at the configured interval and at the end. A non-finite loss
    /// stops the run after saving a diagnostic checkpoint under
    /// `out_dir/diagnostic`.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<Vec<MetricsRow>> {
        let mut writer = match out_dir {
            Some(dir) if self.t == 0 => Some(MetricsWriter::create(dir)?),
            Some(dir) => Some(MetricsWriter::append(dir)?),
            None => None,
        };
        let mut rows = Vec::new();
        let mut emit = |row: MetricsRow, rows: &mut Vec<MetricsRow>| -> Result<()> {
            if let Some(w) = writer.as_mut() {
                w.write(&row)?;
            }
            info!(
                "t={} episodes={} eval={:.2}±{:.2} alpha={:.4}",
                row.timestep, row.episodes, row.eval_return, row.eval_return_std, row.alpha
            );
            rows.push(row);
            Ok(())
        };
        if self.t == 0 {
            let row = self.log_row()?;
            emit(row, &mut rows)?;
        }
        while self.t < self.config.steps {
            if let Err(e) = self.step() {
                if let (Error::NonFinite(_), Some(dir)) = (&e, out_dir) {
                    let diag = dir.join("diagnostic");
                    warn!("aborting at step {}: {e}; diagnostic checkpoint in {}", self.t, diag.display());
                    save_checkpoint(self, &diag)?;
                }
                return Err(e);
            }
            if self.row_due() {
                let row = self.log_row()?;
                emit(row, &mut rows)?;
                if let Some(dir) = out_dir {
                    let every = self.config.checkpoint_interval;
                    if self.t == self.config.steps || (every > 0 && self.t % every == 0) {
                        save_checkpoint(self, &checkpoint_dir(dir))?;
                    }
                }
            }
        }
        Ok(rows)
    }
}

/// Where [`Trainer::run`] keeps the latest checkpoint.
pub fn checkpoint_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoint")
}

/// Trains a fresh agent; see [`Trainer::run`].
pub fn train(config: TrainConfig, out_dir: Option<&Path>) -> Result<(Trainer, Vec<MetricsRow>)> {
    let mut trainer = Trainer::new(config)?;
    let rows = trainer.run(out_dir)?;
    Ok((trainer, rows))
}
