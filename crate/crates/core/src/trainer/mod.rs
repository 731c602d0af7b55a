//! Training orchestration: the per-step update loop, evaluation,
//! checkpoints, metrics logs, and the experiment harnesses built on them.

mod ablation;
mod checkpoint;
mod config;
mod eval;
mod learner;
mod metrics;
mod plots;
mod run;
mod search;

pub use ablation::{
    ablate_architecture, ablate_expansion, ArchitectureConfig, ArchitectureRow, ExpansionCombo, ExpansionReport,
    ExpansionRun, EnsembleRollout, write_architecture_table,
};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ActorMode, TrainConfig, CONFIG_KEYS};
pub use eval::{evaluate, evaluate_policy, evaluate_with, EvalSummary};
pub use learner::{CriticTarget, Learner, StepStats, UpdateEvent};
pub use metrics::{read_jsonl, MetricsRow, MetricsWriter};
pub use plots::{emit_plots, render_svg, Band, PlotData};
pub use run::{checkpoint_dir, train, Trainer};
pub use search::{draw_schedule, entropy_search, SearchResult, SearchSpace};

#[cfg(test)]
mod tests;
