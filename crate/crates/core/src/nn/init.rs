use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;

/// `U(-bound, bound)` entries.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, dims: &[usize], bound: f64) -> Tensor {
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(dims.to_vec(), data).expect("dims match data")
}

/// A `rows x cols` matrix with orthonormal columns (tall) or rows (wide).
pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // columns of a tall x short gaussian matrix, orthonormalized by modified Gram-Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..tall).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut data = vec![0.0; rows * cols];
    for (j, b) in basis.iter().enumerate() {
        for (i, &x) in b.iter().enumerate() {
            if rows >= cols {
                data[i * cols + j] = x;
            } else {
                data[j * cols + i] = x;
            }
        }
    }
    Tensor::new(vec![rows, cols], data).expect("dims match data")
}
