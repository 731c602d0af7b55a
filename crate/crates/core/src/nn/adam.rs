use super::param::Param;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Adam with bias-corrected moments. Moment buffers are created on the first step.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// Restores checkpointed state.
    pub fn restore(&mut self, step: u64, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<()> {
        if first.len() != second.len() {
            return Err(Error::Format("adam moment counts differ".into()));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// Applies one update and zeroes `grads`. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: Vec<&mut Param>, grads: &mut [Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(
                "adam",
                format!("{} params but {} gradients", params.len(), grads.len()),
            ));
        }
        for (p, g) in params.iter().zip(grads.iter()) {
            if p.value.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.value.dims().to_vec(),
                    rhs: g.dims().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Tensor::zeros(g.dims().to_vec())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len() {
            return Err(Error::invalid("adam", "parameter list changed between steps"));
        }

        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for (i, (p, g)) in params.into_iter().zip(grads.iter_mut()).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (w, gj)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            g.data_mut().fill(0.0);
        }
        Ok(())
    }
}
