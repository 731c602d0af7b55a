//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every operation in creation order. [`Var`] handles are
//! cheap copies pointing into the tape; calling [`Tape::backward`] on a scalar
//! root walks the tape in reverse and accumulates gradients into leaves
//! created with [`Tape::param`]. Leaves created with [`Tape::constant`] still
//! carry gradient *through* downstream ops but never store one themselves.
//!
//! Broadcasting is limited to three cases: equal shapes, a scalar against any
//! shape, and a row vector against a matrix with the same trailing width.
//! Anything else is a shape error.

mod check;
mod tape;
mod tensor;

pub use check::{finite_diff_check, GradCheck};
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
