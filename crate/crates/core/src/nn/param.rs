use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// A named trainable array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
        }
    }

    /// Records this parameter on `tape`, tracked or constant.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Var<'t> {
        tape.leaf(self.value.clone(), trainable)
    }
}

/// Anything that owns an ordered list of parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }
}

pub fn bind_all<'t>(params: &[&Param], tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
    params.iter().map(|p| p.bind(tape, trainable)).collect()
}

/// Leaf gradients in the order given, zeros where none accumulated.
pub fn collect_grads(vars: &[Var<'_>]) -> Vec<Tensor> {
    vars.iter().map(|v| v.grad_or_zeros()).collect()
}

/// Polyak averaging: `target <- tau * online + (1 - tau) * target`.
pub fn ema_update(target: Vec<&mut Param>, online: Vec<&Param>, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid("ema_update", format!("tau {tau} outside (0, 1]")));
    }
    if target.len() != online.len() {
        return Err(Error::invalid(
            "ema_update",
            format!("{} target params vs {} online", target.len(), online.len()),
        ));
    }
    for (t, o) in target.iter().zip(&online) {
        if t.value.shape() != o.value.shape() {
            return Err(Error::Shape {
                op: "ema_update",
                lhs: t.value.dims().to_vec(),
                rhs: o.value.dims().to_vec(),
            });
        }
    }
    for (t, o) in target.into_iter().zip(online) {
        for (tv, ov) in t.value.data_mut().iter_mut().zip(o.value.data()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}
