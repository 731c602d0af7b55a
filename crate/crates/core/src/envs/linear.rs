use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Clock, Env, EnvSnapshot, Step};
use crate::agent::{ImaginedModel, ImaginedPolicy};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `x' = A x + B u + c` with reward `-x'Qx - u'Ru` on the pre-step state and
/// no termination. Matrices are row-major.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    m: usize,
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    q: Vec<f64>,
    r: Vec<f64>,
    x: Vec<f64>,
    clock: Clock,
}

impl LinearSystem {
    pub const MAX_STEPS: usize = 50;

    pub fn new(m: usize, n: usize, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, q: Vec<f64>, r: Vec<f64>) -> Result<Self> {
        let expect = [("A", a.len(), m * m), ("B", b.len(), m * n), ("c", c.len(), m), ("Q", q.len(), m * m), ("R", r.len(), n * n)];
        if m == 0 || n == 0 {
            return Err(Error::Env("linear: dimensions must be positive".into()));
        }
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Env(format!("linear: {name} has {got} entries, expected {want}")));
            }
        }
        Ok(LinearSystem {
            m,
            n,
            a,
            b,
            c,
            q,
            r,
            x: vec![0.0; m],
            clock: Clock::default(),
        })
    }

    /// One-dimensional system `x' = a x + b u`.
    pub fn scalar(a: f64, b: f64, q: f64, r: f64) -> Self {
        Self::new(1, 1, vec![a], vec![b], vec![0.0], vec![q], vec![r]).expect("scalar system is well formed")
    }

    pub fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        -quad(&self.q, x) - quad(&self.r, u)
    }

    pub fn transition(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut next = matvec(&self.a, self.m, x);
        for (v, (bu, c)) in next.iter_mut().zip(matvec(&self.b, self.m, u).into_iter().zip(&self.c)) {
            *v += bu + c;
        }
        next
    }
}

fn matvec(mat: &[f64], rows: usize, v: &[f64]) -> Vec<f64> {
    let cols = v.len();
    (0..rows).map(|i| (0..cols).map(|j| mat[i * cols + j] * v[j]).sum()).collect()
}

fn quad(mat: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    (0..n).map(|i| (0..n).map(|j| v[i] * mat[i * n + j] * v[j]).sum::<f64>()).sum()
}

fn transpose(mat: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; mat.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = mat[i * cols + j];
        }
    }
    t
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            for j in 0..n {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

impl Env for LinearSystem {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn state_dim(&self) -> usize {
        self.m
    }

    fn action_dim(&self) -> usize {
        self.n
    }

    fn max_steps(&self) -> usize {
        Self::MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.x = (0..self.m).map(|_| rng.random_range(-1.0..1.0)).collect();
        self.clock.restart();
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        self.clock.check("linear", action, self.n)?;
        let reward = self.reward(&self.x, action);
        self.x = self.transition(&self.x, action);
        let truncated = self.clock.tick(false, Self::MAX_STEPS);
        Ok(Step {
            next_state: self.observation(),
            reward,
            done: false,
            truncated,
        })
    }

    fn observation(&self) -> Vec<f64> {
        self.x.clone()
    }

    fn set_state(&mut self, observation: &[f64]) -> Result<()> {
        if observation.len() != self.m || observation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Env(format!("linear: bad state {observation:?}")));
        }
        self.x = observation.to_vec();
        self.clock.restart();
        Ok(())
    }

    fn save(&self) -> EnvSnapshot {
        self.clock.snapshot(self.x.clone())
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<()> {
        self.clock.restore("linear", snapshot, self.m)?;
        self.x = snapshot.values.clone();
        Ok(())
    }
}

/// Exact discounted `horizon`-step return of the linear policy `u = K x`
/// (`K` is `n x m`, row-major) from `x`.
///
/// Uses the backward recursion on `V_h(x) = x'P x + q'x + s`:
/// with `M = A + B K` and `W = Q + K'R K`,
/// `P <- -W + g M'P M`, `q <- g M'(q + 2 P c)`, `s <- g (c'P c + q'c + s)`.
pub fn oracle_value(sys: &LinearSystem, k: &[f64], x: &[f64], horizon: usize, gamma: f64) -> Result<f64> {
    let (m, n) = (sys.m, sys.n);
    if k.len() != n * m || x.len() != m {
        return Err(Error::Env(format!("oracle_value: K needs {} entries and x {m}", n * m)));
    }
    let mut big_m = matmul(&sys.b, k, m, n, m);
    for (v, a) in big_m.iter_mut().zip(&sys.a) {
        *v += a;
    }
    let kt = transpose(k, n, m);
    let mut w = matmul(&kt, &matmul(&sys.r, k, n, n, m), m, n, m);
    for (v, q) in w.iter_mut().zip(&sys.q) {
        *v += q;
    }
    let mt = transpose(&big_m, m, m);
    let mut p = vec![0.0; m * m];
    let mut q = vec![0.0; m];
    let mut s = 0.0;
    for _ in 0..horizon {
        let pc = matvec(&p, m, &sys.c);
        let s_next = gamma * (sys.c.iter().zip(&pc).map(|(c, v)| c * v).sum::<f64>() + q.iter().zip(&sys.c).map(|(a, b)| a * b).sum::<f64>() + s);
        let shifted: Vec<f64> = q.iter().zip(&pc).map(|(q, pc)| q + 2.0 * pc).collect();
        let q_next: Vec<f64> = matvec(&mt, m, &shifted).into_iter().map(|v| gamma * v).collect();
        let mpm = matmul(&mt, &matmul(&p, &big_m, m, m, m), m, m, m);
        p = w.iter().zip(&mpm).map(|(w, v)| -w + gamma * v).collect();
        q = q_next;
        s = s_next;
    }
    Ok(quad(&p, x) + q.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + s)
}

/// Exact model of a [`LinearSystem`] on a tape, usable wherever a learned
/// world model is expected.
#[derive(Clone, Debug)]
pub struct LinearModel<'t> {
    a_t: Var<'t>,
    b_t: Var<'t>,
    c: Var<'t>,
    q: Var<'t>,
    r: Var<'t>,
}

impl<'t> LinearModel<'t> {
    pub fn new(tape: &'t Tape, sys: &LinearSystem) -> Self {
        let (m, n) = (sys.m, sys.n);
        let constant = |dims: Vec<usize>, data: Vec<f64>| tape.constant(Tensor::new(dims, data).expect("consistent sizes"));
        LinearModel {
            a_t: constant(vec![m, m], transpose(&sys.a, m, m)),
            b_t: constant(vec![n, m], transpose(&sys.b, m, n)),
            c: constant(vec![m], sys.c.clone()),
            q: constant(vec![m, m], sys.q.clone()),
            r: constant(vec![n, n], sys.r.clone()),
        }
    }
}

impl<'t> ImaginedModel<'t> for LinearModel<'t> {
    fn initial_state(&self, _tape: &'t Tape, _batch: usize) -> Vec<Var<'t>> {
        Vec::new()
    }

    fn step(&self, x: Var<'t>, u: Var<'t>, _hidden: &mut Vec<Var<'t>>) -> Result<Var<'t>> {
        x.matmul(self.a_t)?.add(u.matmul(self.b_t)?)?.add(self.c)
    }

    fn reward(&self, x: Var<'t>, u: Var<'t>) -> Result<Var<'t>> {
        let xq = x.matmul(self.q)?.mul(x)?.sum_last();
        let ur = u.matmul(self.r)?.mul(u)?.sum_last();
        Ok(xq.add(ur)?.neg())
    }

    fn termination(&self, _x: Var<'t>, _u: Var<'t>) -> Result<Option<Var<'t>>> {
        Ok(None)
    }
}

/// Deterministic `u = K x` with zero log-probability; noise is ignored.
#[derive(Clone, Debug)]
pub struct LinearPolicy<'t> {
    k_t: Var<'t>,
}

impl<'t> LinearPolicy<'t> {
    /// `k` is `n x m` row-major.
    pub fn new(tape: &'t Tape, k: &[f64], state_dim: usize, action_dim: usize) -> Result<Self> {
        let k_t = Tensor::new([state_dim, action_dim], transpose(k, action_dim, state_dim))?;
        Ok(LinearPolicy { k_t: tape.constant(k_t) })
    }
}

impl<'t> ImaginedPolicy<'t> for LinearPolicy<'t> {
    fn sample(&self, x: Var<'t>, _noise: &Tensor) -> Result<(Var<'t>, Var<'t>)> {
        let u = x.matmul(self.k_t)?;
        let logp = x.tape().constant(Tensor::zeros([x.shape().rows(), 1]));
        Ok((u, logp))
    }
}
