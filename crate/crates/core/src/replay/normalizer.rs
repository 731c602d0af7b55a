use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Running per-dimension mean and variance (Welford).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    floor: f64,
}

impl Normalizer {
    pub const DEFAULT_FLOOR: f64 = 1e-3;

    pub fn new(dim: usize, floor: f64) -> Result<Self> {
        if dim == 0 || !(floor > 0.0) {
            return Err(Error::invalid("normalizer", "dimension and std floor must be positive"));
        }
        Ok(Normalizer {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            floor,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim(), "normalizer: dimension mismatch");
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    /// Frozen copy of the current statistics. Before any update the
    /// transform is the identity.
    pub fn stats(&self) -> NormStats {
        let std = if self.count == 0 {
            vec![1.0; self.dim()]
        } else {
            self.m2
                .iter()
                .map(|s| (s / self.count as f64).sqrt().max(self.floor))
                .collect()
        };
        NormStats {
            mean: self.mean.clone(),
            std,
        }
    }

    /// Raw accumulators `(count, mean, m2)`, for exact checkpointing.
    pub fn raw(&self) -> (u64, &[f64], &[f64]) {
        (self.count, &self.mean, &self.m2)
    }

    pub fn from_raw(count: u64, mean: Vec<f64>, m2: Vec<f64>, floor: f64) -> Result<Self> {
        if mean.len() != m2.len() || mean.is_empty() {
            return Err(Error::invalid("normalizer", "accumulator lengths differ"));
        }
        Ok(Normalizer { count, mean, m2, floor })
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

/// `x_tilde = (x - mean) / std` with a floored std.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }

    /// Row-wise normalization of a `[batch, dim]` tensor.
    pub fn normalize_tensor(&self, x: &Tensor) -> Tensor {
        let d = self.mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.mean[i % d]) / self.std[i % d];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;

    #[test]
    fn constant_stream_normalizes_to_zero() {
        let mut nz = Normalizer::new(2, 1e-3).unwrap();
        for _ in 0..50 {
            nz.update(&[3.5, -2.0]);
        }
        let s = nz.stats();
        assert_eq!(s.std, vec![1e-3, 1e-3]);
        assert_eq!(s.normalize(&[3.5, -2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn fresh_normalizer_is_identity() {
        let nz = Normalizer::new(3, 1e-3).unwrap();
        assert_eq!(nz.stats().normalize(&[1.0, -2.0, 3.0]), vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut nz = Normalizer::new(1, 1e-3).unwrap();
        for _ in 0..10_000 {
            nz.update(&[rng.sample(StandardNormal)]);
        }
        let s = nz.stats();
        assert!(s.mean[0].abs() < 0.05 && (s.std[0] - 1.0).abs() < 0.05, "{s:?}");
    }

    #[test]
    fn round_trip_and_tensor_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nz = Normalizer::new(3, 1e-3).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|i| rng.random_range(-5.0..5.0) * (i + 1) as f64 + 2.0).collect();
            nz.update(&x);
        }
        let s = nz.stats();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-100.0..100.0)).collect();
            let back = s.denormalize(&s.normalize(&x));
            assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let t = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let nt = s.normalize_tensor(&t);
        assert_eq!(nt.row(1), s.normalize(&[4.0, 5.0, 6.0]).as_slice());
    }

    #[test]
    fn mean_is_order_insensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut xs: Vec<f64> = (0..5000).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut a = Normalizer::new(1, 1e-3).unwrap();
        xs.iter().for_each(|&x| a.update(&[x]));
        xs.shuffle(&mut rng);
        let mut b = Normalizer::new(1, 1e-3).unwrap();
        xs.iter().for_each(|&x| b.update(&[x]));
        assert!((a.stats().mean[0] - b.stats().mean[0]).abs() < 1e-8);
        assert!((a.stats().std[0] - b.stats().std[0]).abs() < 1e-8);
    }
}
