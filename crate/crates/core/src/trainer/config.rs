//! Flat `key = value` configuration with dotted keys.
//!
//! ```text
//! # comments start with '#'
//! env = pendulum
//! replay.capacity = 1000000
//! actor.lr = 1e-4
//! ```
//!
//! Unknown keys and malformed values are errors. [`TrainConfig::to_text`]
//! emits every key, and parsing that text reproduces the config exactly.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::EntropySchedule;
use crate::error::{Error, Result};
use crate::nn::Activation;

/// How the actor is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActorMode {
    /// Differentiate the H-step expansion through the world model.
    Svg,
    /// The model-free soft actor objective; the horizon is unused.
    ModelFree,
}

impl FromStr for ActorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svg" => Ok(ActorMode::Svg),
            "model-free" => Ok(ActorMode::ModelFree),
            other => Err(Error::Config(format!("actor mode {other:?} is not svg or model-free"))),
        }
    }
}

impl std::fmt::Display for ActorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActorMode::Svg => "svg",
            ActorMode::ModelFree => "model-free",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: String,
    pub seed: u64,
    /// Environment steps `T`.
    pub steps: u64,
    pub horizon: usize,
    pub gamma: f64,

    pub replay_capacity: usize,
    pub warmup_steps: u64,

    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub init_temperature: f64,
    pub tau: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,

    pub step_updates: usize,
    pub step_batch: usize,
    pub seq_updates: usize,
    pub seq_batch: usize,
    /// Transitions per dynamics training sequence; 0 means `max(H, 1) + 1`.
    pub seq_len: usize,

    pub actor_hidden: usize,
    pub actor_layers: usize,
    pub critic_hidden: usize,
    pub critic_layers: usize,
    pub model_hidden: usize,
    pub model_layers: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub model_lr: f64,
    pub activation: Activation,

    pub entropy_init: f64,
    pub entropy_final: f64,
    pub entropy_beta: f64,

    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Prediction steps of the logged model validation error.
    pub val_steps: usize,
    pub val_batch: usize,
    /// Checkpoint every this many steps (0 disables); a multiple of the
    /// evaluation interval.
    pub checkpoint_interval: u64,
    pub norm_floor: f64,

    pub critic_mve: bool,
    pub actor_mode: ActorMode,
    /// Std of additive noise applied to the dynamics parameters used in
    /// imagination; fresh noise per update.
    pub model_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: "pendulum".into(),
            seed: 0,
            steps: 100_000,
            horizon: 2,
            gamma: 0.99,
            replay_capacity: 1_000_000,
            warmup_steps: 1000,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            temperature_lr: 5e-4,
            init_temperature: 0.1,
            tau: 5e-3,
            log_std_min: -5.0,
            log_std_max: 2.0,
            step_updates: 1,
            step_batch: 512,
            seq_updates: 4,
            seq_batch: 1024,
            seq_len: 0,
            actor_hidden: 512,
            actor_layers: 2,
            critic_hidden: 512,
            critic_layers: 2,
            model_hidden: 512,
            model_layers: 2,
            gru_hidden: 512,
            gru_layers: 2,
            model_lr: 1e-3,
            activation: Activation::Relu,
            entropy_init: 0.0,
            entropy_final: -1.0,
            entropy_beta: 1.0,
            eval_interval: 1000,
            eval_episodes: 5,
            val_steps: 2,
            val_batch: 256,
            checkpoint_interval: 0,
            norm_floor: 1e-3,
            critic_mve: false,
            actor_mode: ActorMode::Svg,
            model_noise: 0.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: {value:?} is not a boolean"))),
    }
}

macro_rules! config_keys {
    ($($key:literal => $field:ident : $kind:ident),* $(,)?) => {
        /// Every accepted key, in file order.
        pub const CONFIG_KEYS: &[&str] = &[$($key),*];

        impl TrainConfig {
            /// Sets one dotted key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    $($key => { self.$field = config_keys!(@parse $kind, $key, value); })*
                    other => return Err(Error::Config(format!("unknown key {other:?}"))),
                }
                Ok(())
            }

            /// Every key with its current value, one per line.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $( writeln!(out, "{} = {}", $key, config_keys!(@show $kind, self.$field)).unwrap(); )*
                out
            }
        }
    };
    (@parse bool, $key:expr, $v:expr) => { parse_bool($key, $v)? };
    (@parse float, $key:expr, $v:expr) => { parse::<f64>($key, $v)? };
    (@parse value, $key:expr, $v:expr) => { parse($key, $v)? };
    (@show float, $x:expr) => { format!("{:?}", $x) };
    (@show $other:ident, $x:expr) => { $x.to_string() };
}

config_keys! {
    "env" => env: value,
    "seed" => seed: value,
    "steps" => steps: value,
    "horizon" => horizon: value,
    "gamma" => gamma: float,
    "replay.capacity" => replay_capacity: value,
    "warmup.steps" => warmup_steps: value,
    "actor.lr" => actor_lr: float,
    "critic.lr" => critic_lr: float,
    "temperature.lr" => temperature_lr: float,
    "temperature.init" => init_temperature: float,
    "critic.tau" => tau: float,
    "actor.log_std_min" => log_std_min: float,
    "actor.log_std_max" => log_std_max: float,
    "step.updates" => step_updates: value,
    "step.batch" => step_batch: value,
    "seq.updates" => seq_updates: value,
    "seq.batch" => seq_batch: value,
    "seq.len" => seq_len: value,
    "actor.hidden" => actor_hidden: value,
    "actor.layers" => actor_layers: value,
    "critic.hidden" => critic_hidden: value,
    "critic.layers" => critic_layers: value,
    "model.hidden" => model_hidden: value,
    "model.layers" => model_layers: value,
    "model.gru_hidden" => gru_hidden: value,
    "model.gru_layers" => gru_layers: value,
    "model.lr" => model_lr: float,
    "activation" => activation: value,
    "entropy.init" => entropy_init: float,
    "entropy.final" => entropy_final: float,
    "entropy.beta" => entropy_beta: float,
    "eval.interval" => eval_interval: value,
    "eval.episodes" => eval_episodes: value,
    "val.steps" => val_steps: value,
    "val.batch" => val_batch: value,
    "checkpoint.interval" => checkpoint_interval: value,
    "normalizer.floor" => norm_floor: float,
    "ablation.critic_mve" => critic_mve: bool,
    "ablation.actor_mode" => actor_mode: value,
    "ablation.model_noise" => model_noise: float,
}

impl TrainConfig {
    /// Small networks and batches sized for single-core runs of a few tens of
    /// thousands of steps. Rates and the update schedule are unchanged except
    /// where the smaller batches call for faster learning.
    pub fn desk() -> Self {
        TrainConfig {
            steps: 20_000,
            replay_capacity: 100_000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            step_batch: 128,
            seq_updates: 1,
            seq_batch: 128,
            actor_hidden: 64,
            critic_hidden: 64,
            model_hidden: 64,
            gru_hidden: 32,
            gru_layers: 1,
            model_layers: 1,
            val_batch: 128,
            ..TrainConfig::default()
        }
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Defaults overridden by the text of a config file.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Transitions per dynamics training sequence.
    pub fn sequence_length(&self) -> usize {
        if self.seq_len == 0 {
            self.horizon.max(1) + 1
        } else {
            self.seq_len
        }
    }

    pub fn schedule(&self) -> Result<EntropySchedule> {
        EntropySchedule::new(self.entropy_init, self.entropy_final, self.entropy_beta, self.steps)
    }

    /// Whether anything consumes the world model, so it must be trained.
    pub fn uses_model(&self) -> bool {
        self.actor_mode == ActorMode::Svg || self.critic_mve
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        crate::envs::make_env(&self.env).map_err(|e| Error::Config(e.to_string()))?;
        let rates = [
            ("actor.lr", self.actor_lr),
            ("critic.lr", self.critic_lr),
            ("temperature.lr", self.temperature_lr),
            ("temperature.init", self.init_temperature),
            ("model.lr", self.model_lr),
            ("critic.tau", self.tau),
            ("normalizer.floor", self.norm_floor),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if self.tau > 1.0 {
            return fail(format!("critic.tau {} exceeds 1", self.tau));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.log_std_min >= self.log_std_max {
            return fail("actor log-std bounds are empty".into());
        }
        let sizes = [
            ("steps", self.steps as usize),
            ("replay.capacity", self.replay_capacity),
            ("step.batch", self.step_batch),
            ("seq.batch", self.seq_batch),
            ("actor.hidden", self.actor_hidden),
            ("critic.hidden", self.critic_hidden),
            ("model.hidden", self.model_hidden),
            ("model.gru_hidden", self.gru_hidden),
            ("model.gru_layers", self.gru_layers),
            ("eval.interval", self.eval_interval as usize),
            ("eval.episodes", self.eval_episodes),
            ("val.steps", self.val_steps),
            ("val.batch", self.val_batch),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.critic_mve && self.horizon == 0 {
            return fail("ablation.critic_mve needs horizon >= 1".into());
        }
        if !(self.model_noise >= 0.0 && self.model_noise.is_finite()) {
            return fail(format!("ablation.model_noise {} must be non-negative", self.model_noise));
        }
        if self.checkpoint_interval % self.eval_interval != 0 {
            return fail("checkpoint.interval must be a multiple of eval.interval".into());
        }
        self.schedule()?;
        Ok(())
    }
}
