//! Function approximators and their training utilities.

mod adam;
mod checkpoint;
mod gru;
mod init;
mod mlp;
mod param;

pub use adam::Adam;
pub use checkpoint::{load_into, read_params, write_params};
pub use gru::{GruStack, GruVars};
pub use init::{orthogonal, uniform};
pub use mlp::{Activation, Mlp, MlpVars};
pub use param::{bind_all, collect_grads, ema_update, Module, Param};
