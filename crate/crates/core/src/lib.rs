//! SAC-SVG(H): a soft actor-critic whose actor update differentiates through
//! an H-step rollout of a learned deterministic recurrent world model.

pub mod agent;
pub mod autodiff;
pub mod critic;
pub mod envs;
pub mod error;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod trainer;
pub mod world_model;

pub use autodiff::{finite_diff_check, GradCheck, Shape, Tape, Tensor, Var};
pub use error::{Error, Result};
