//! Shared fixtures for the update benchmarks.

use sacsvg::replay::{NormStats, SequenceBatch, StepBatch};
use sacsvg::trainer::{Learner, TrainConfig, Trainer};
use sacsvg::Result;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A learner with replay batches drawn from random-action pendulum data.
pub struct Fixture {
    pub config: TrainConfig,
    pub learner: Learner,
    pub steps: StepBatch,
    pub sequences: SequenceBatch,
    pub stats: NormStats,
}

impl Fixture {
    /// Fills the buffer with `config.warmup_steps` random transitions.
    pub fn new(mut config: TrainConfig) -> Result<Self> {
        config.steps = config.steps.max(config.warmup_steps);
        let mut trainer = Trainer::new(config.clone())?;
        while trainer.timestep() < config.warmup_steps {
            trainer.step()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let buf = trainer.buffer();
        Ok(Fixture {
            steps: buf.sample_steps(config.step_batch, &mut rng)?,
            sequences: buf.sample_sequences(config.seq_batch, config.sequence_length(), &mut rng)?,
            stats: trainer.norm_stats(),
            learner: trainer.learner().clone(),
            config,
        })
    }

    /// The desk preset on pendulum at horizon `h`.
    pub fn desk(horizon: usize) -> Result<Self> {
        let mut c = TrainConfig::desk();
        c.env = "pendulum".into();
        c.horizon = horizon;
        Self::new(c)
    }
}
