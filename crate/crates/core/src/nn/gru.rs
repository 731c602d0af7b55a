use rand::Rng;

use super::init::orthogonal;
use super::param::{bind_all, Module, Param};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Stacked GRU cells. Each layer's output is the next layer's input.
///
/// Gates, with `x` the layer input and `h` its previous hidden state:
///
/// ```text
/// r  = sigmoid(x W_r + b_ir + h U_r + b_hr)
/// z  = sigmoid(x W_z + b_iz + h U_z + b_hz)
/// n  = tanh(x W_n + b_in + r * (h U_n + b_hn))
/// h' = (1 - z) * h + z * n
/// ```
///
/// The three gate blocks are stored side by side as `[in, 3H]` and `[H, 3H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruStack {
    input: usize,
    hidden: usize,
    // (w_ih, w_hh, b_ih, b_hh) per layer
    layers: Vec<[Param; 4]>,
}

impl GruStack {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 || layers == 0 {
            return Err(Error::invalid("gru", "input, hidden and layer counts must be positive"));
        }
        let gate_block = |rng: &mut R, rows: usize| {
            let blocks: Vec<Tensor> = (0..3).map(|_| orthogonal(rng, rows, hidden)).collect();
            let mut data = vec![0.0; rows * 3 * hidden];
            for (g, block) in blocks.iter().enumerate() {
                for r in 0..rows {
                    data[r * 3 * hidden + g * hidden..r * 3 * hidden + (g + 1) * hidden]
                        .copy_from_slice(block.row(r));
                }
            }
            Tensor::new(vec![rows, 3 * hidden], data).expect("gate dims")
        };
        let layers = (0..layers)
            .map(|l| {
                let in_w = if l == 0 { input } else { hidden };
                [
                    Param::new(format!("{name}.{l}.w_ih"), gate_block(rng, in_w)),
                    Param::new(format!("{name}.{l}.w_hh"), gate_block(rng, hidden)),
                    Param::new(format!("{name}.{l}.b_ih"), Tensor::zeros([3 * hidden])),
                    Param::new(format!("{name}.{l}.b_hh"), Tensor::zeros([3 * hidden])),
                ]
            })
            .collect();
        Ok(GruStack {
            input,
            hidden,
            layers,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> GruVars<'t> {
        self.with_vars(&bind_all(&self.params(), tape, trainable))
    }

    pub fn with_vars<'t>(&self, vars: &[Var<'t>]) -> GruVars<'t> {
        assert_eq!(vars.len(), 4 * self.layers.len(), "gru: wrong number of vars");
        GruVars {
            input: self.input,
            hidden: self.hidden,
            layers: vars.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
        }
    }
}

impl Module for GruStack {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.iter()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.iter_mut()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct GruVars<'t> {
    input: usize,
    hidden: usize,
    layers: Vec<[Var<'t>; 4]>,
}

impl<'t> GruVars<'t> {
    /// Zero hidden state, one `[batch, H]` constant per layer.
    pub fn zero_state(&self, tape: &'t Tape, batch: usize) -> Vec<Var<'t>> {
        (0..self.layers.len())
            .map(|_| tape.constant(Tensor::zeros([batch, self.hidden])))
            .collect()
    }

    /// One recurrent step; returns the new per-layer hidden state. The last
    /// entry is the top layer's output.
    pub fn step(&self, x: Var<'t>, h: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let xs = x.shape();
        if xs.rank() != 2 || xs.last() != self.input {
            return Err(Error::Shape {
                op: "gru_step",
                lhs: xs.dims().to_vec(),
                rhs: vec![self.input],
            });
        }
        if h.len() != self.layers.len() {
            return Err(Error::invalid(
                "gru_step",
                format!("expected {} hidden layers, got {}", self.layers.len(), h.len()),
            ));
        }
        let hs = self.hidden;
        let mut out = Vec::with_capacity(h.len());
        let mut inp = x;
        for (layer, &h_prev) in self.layers.iter().zip(h) {
            let hshape = h_prev.shape();
            if hshape.dims() != [xs.dims()[0], hs] {
                return Err(Error::Shape {
                    op: "gru_step",
                    lhs: hshape.dims().to_vec(),
                    rhs: vec![xs.dims()[0], hs],
                });
            }
            let [w_ih, w_hh, b_ih, b_hh] = *layer;
            let gi = inp.matmul(w_ih)?.add(b_ih)?;
            let gh = h_prev.matmul(w_hh)?.add(b_hh)?;
            let r = gi.slice(0, hs)?.add(gh.slice(0, hs)?)?.sigmoid()?;
            let z = gi.slice(hs, 2 * hs)?.add(gh.slice(hs, 2 * hs)?)?.sigmoid()?;
            let n = gi
                .slice(2 * hs, 3 * hs)?
                .add(r.mul(gh.slice(2 * hs, 3 * hs)?)?)?
                .tanh()?;
            let h_new = h_prev.add(z.mul(n.sub(h_prev)?)?)?;
            out.push(h_new);
            inp = h_new;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::nn::uniform;

    #[test]
    fn zero_weights_and_state_stay_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut gru = GruStack::new("g", 3, 4, 2, &mut rng).unwrap();
        for p in gru.params_mut() {
            p.value.data_mut().fill(0.0);
        }
        let tape = Tape::new();
        let g = gru.bind(&tape, false);
        let h0 = g.zero_state(&tape, 2);
        let x = tape.constant(uniform(&mut rng, &[2, 3], 1.0));
        let h1 = g.step(x, &h0).unwrap();
        assert_eq!(h1.len(), 2);
        for h in h1 {
            assert!(h.value().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gates_use_orthogonal_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gru = GruStack::new("g", 5, 4, 1, &mut rng).unwrap();
        let w_hh = &gru.params()[1].value;
        // each hidden-to-hidden gate block is square orthogonal: columns have unit norm
        for g in 0..3 {
            for c in 0..4 {
                let norm: f64 = (0..4).map(|r| w_hh.row(r)[g * 4 + c].powi(2)).sum();
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gru = GruStack::new("g", 3, 4, 2, &mut rng).unwrap();
        let tape = Tape::new();
        let g = gru.bind(&tape, false);
        let h0 = g.zero_state(&tape, 2);
        assert!(g.step(tape.constant(Tensor::zeros([2, 2])), &h0).is_err());
        assert!(g.step(tape.constant(Tensor::zeros([2, 3])), &h0[..1]).is_err());
        let wrong = g.zero_state(&tape, 3);
        assert!(g.step(tape.constant(Tensor::zeros([2, 3])), &wrong).is_err());
    }

    #[test]
    fn input_and_hidden_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gru = GruStack::new("g", 3, 5, 2, &mut rng).unwrap();
        let x = uniform(&mut rng, &[4, 3], 1.0);
        let h: Vec<Tensor> = (0..2).map(|_| uniform(&mut rng, &[4, 5], 0.5)).collect();
        let report = finite_diff_check(
            |tape, p| {
                let g = gru.bind(tape, false);
                let out = g.step(p[0], &p[1..])?;
                out[1].square()?.sum().add(out[0].sum())
            },
            &[x, h[0].clone(), h[1].clone()],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");

        let params: Vec<Tensor> = gru.params().iter().map(|p| p.value.clone()).collect();
        let x = uniform(&mut rng, &[4, 3], 1.0);
        let report = finite_diff_check(
            |tape, p| {
                let g = gru.with_vars(p);
                let h0 = g.zero_state(tape, 4);
                let h1 = g.step(tape.constant(x.clone()), &h0)?;
                let h2 = g.step(tape.constant(x.clone()), &h1)?;
                h2[1].square()?.mean().add(h2[0].mean())
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn unrolled_steps_reach_first_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gru = GruStack::new("g", 2, 3, 2, &mut rng).unwrap();
        let tape = Tape::new();
        let g = gru.bind(&tape, false);
        let x1 = tape.param(uniform(&mut rng, &[1, 2], 1.0));
        let mut h = g.zero_state(&tape, 1);
        h = g.step(x1, &h).unwrap();
        for _ in 0..2 {
            h = g.step(tape.constant(Tensor::zeros([1, 2])), &h).unwrap();
        }
        tape.backward(h[1].sum()).unwrap();
        assert!(x1.grad().unwrap().data().iter().any(|&v| v != 0.0));
    }
}
