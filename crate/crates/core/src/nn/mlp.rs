use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::uniform;
use super::param::{bind_all, Module, Param};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

/// Fully connected network with a hidden activation and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    // (weight [in, out], bias [out]) per layer
    layers: Vec<(Param, Param)>,
}

impl Mlp {
    /// Fan-in scaled uniform initialization; the final layer is additionally
    /// multiplied by `output_scale`.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        widths: &[usize],
        activation: Activation,
        output_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::invalid("mlp", format!("bad layer widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (widths[i], widths[i + 1]);
                let scale = if i + 1 == n { output_scale } else { 1.0 };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = uniform(rng, &[fan_in, fan_out], bound).map(|v| v * scale);
                let b = uniform(rng, &[fan_out], bound).map(|v| v * scale);
                (
                    Param::new(format!("{name}.{i}.weight"), w),
                    Param::new(format!("{name}.{i}.bias"), b),
                )
            })
            .collect();
        Ok(Mlp {
            widths: widths.to_vec(),
            activation,
            layers,
        })
    }

    /// `input -> hidden x layers -> output`.
    pub fn with_hidden<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        hidden: usize,
        hidden_layers: usize,
        output: usize,
        activation: Activation,
        output_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(hidden, hidden_layers));
        widths.push(output);
        Self::new(name, &widths, activation, output_scale, rng)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Sets every weight and bias of the output layer to zero.
    pub fn zero_output_layer(&mut self) {
        let (w, b) = self.layers.last_mut().unwrap();
        w.value.data_mut().fill(0.0);
        b.value.data_mut().fill(0.0);
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut Tensor, &mut Tensor) {
        let (w, b) = &mut self.layers[i];
        (&mut w.value, &mut b.value)
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> MlpVars<'t> {
        self.with_vars(&bind_all(&self.params(), tape, trainable))
    }

    /// Builds the forward graph over externally supplied vars, given in
    /// [`Module::params`] order.
    pub fn with_vars<'t>(&self, vars: &[Var<'t>]) -> MlpVars<'t> {
        assert_eq!(vars.len(), 2 * self.layers.len(), "mlp: wrong number of vars");
        MlpVars {
            input: self.widths[0],
            activation: self.activation,
            layers: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
        }
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }
}

/// An [`Mlp`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars<'t> {
    input: usize,
    activation: Activation,
    layers: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> MlpVars<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.rank() != 2 || shape.last() != self.input {
            return Err(Error::Shape {
                op: "mlp",
                lhs: shape.dims().to_vec(),
                rhs: vec![self.input],
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(*w)?.add(*b)?;
            if i < last {
                h = self.activation.apply(h)?;
            }
        }
        Ok(h)
    }

    /// Vars in [`Module::params`] order.
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::finite_diff_check;

    #[test]
    fn parameter_count_matches_layer_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new("m", &[3, 16, 16, 2], Activation::Relu, 1.0, &mut rng).unwrap();
        assert_eq!(net.num_params(), 4 * 16 + 17 * 16 + 17 * 2);
        assert!(Mlp::new("m", &[3], Activation::Relu, 1.0, &mut rng).is_err());
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new("m", &[2, 8, 3], Activation::Relu, 1.0, &mut rng).unwrap();
        net.zero_output_layer();
        let tape = Tape::new();
        let x = tape.constant(Tensor::new([2, 2], vec![0.3, -4.0, 1.0, 7.0]).unwrap());
        let y = net.bind(&tape, false).forward(x).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new("m", &[2, 2], Activation::Relu, 1.0, &mut rng).unwrap();
        let (w, b) = net.layer_mut(0);
        w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        b.data_mut().fill(0.0);
        let tape = Tape::new();
        let input = Tensor::new([1, 2], vec![-0.7, 2.5]).unwrap();
        let y = net.bind(&tape, false).forward(tape.constant(input.clone())).unwrap();
        assert_eq!(y.value(), input);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new("m", &[3, 4, 1], Activation::Relu, 1.0, &mut rng).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros([2, 2]));
        assert!(matches!(net.bind(&tape, false).forward(x), Err(Error::Shape { op: "mlp", .. })));
    }

    #[test]
    fn random_net_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for activation in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::new("m", &[3, 10, 10, 2], activation, 1.0, &mut rng).unwrap();
            let x = crate::nn::uniform(&mut rng, &[6, 3], 1.0);
            let params: Vec<Tensor> = net.params().iter().map(|p| p.value.clone()).collect();
            let report = finite_diff_check(
                |tape, p| {
                    let h = net.with_vars(p).forward(tape.constant(x.clone()))?;
                    h.square()?.mean().add(h.sum())
                },
                &params,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{activation}: {report:?}");
        }
    }
}
