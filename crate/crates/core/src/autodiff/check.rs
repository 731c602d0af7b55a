use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Max over coordinates of `|analytic - numeric| / (|numeric| + 1e-8)`.
    pub max_rel_error: f64,
    /// Parameter and flat coordinate where the maximum occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the tape gradient of `f` at `params` with central finite differences.
///
/// `f` must be deterministic in its parameters; any sampling noise has to be
/// fixed outside the closure.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("finite difference loss ({value})")));
        }
        tape.backward(loss)?;
        vars.iter().map(|v| v.grad_or_zeros()).collect()
    };

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let value = f(&tape, &vars)?.item();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite(format!("finite difference loss ({value})")))
        }
    };

    let mut work = params.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    for p in 0..work.len() {
        for j in 0..work[p].numel() {
            let orig = work[p].data()[j];
            work[p].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[p].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[p].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[p].data()[j];
            let err = (a - numeric).abs() / (numeric.abs() + 1e-8);
            if err > report.max_rel_error {
                report = GradCheck {
                    max_rel_error: err,
                    worst: (p, j),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
