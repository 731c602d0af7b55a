use std::cell::RefCell;
use std::fmt;

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

/// How an operand index maps onto an output index under broadcasting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Expand {
    Same,
    /// A row vector of this width repeated over every leading index.
    Row(usize),
    Scalar,
}

impl Expand {
    #[inline]
    fn at(self, i: usize) -> usize {
        match self {
            Expand::Same => i,
            Expand::Row(n) => i % n,
            Expand::Scalar => 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Square,
    Relu,
    Softplus,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, usize, usize, Expand, Expand),
    Minimum(usize, usize),
    MatMul(usize, usize),
    Unary(Unary, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumLast(usize),
    Concat(Vec<(usize, usize)>),
    Slice(usize, usize, usize),
    Broadcast(usize, Expand),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records operations in creation order so gradients can be replayed in reverse.
///
/// Nodes are only ever appended, so every node's parents precede it. Leaf
/// gradients accumulate across `backward` calls until `zero_grad`.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn broadcast_pair(op: &'static str, a: &Shape, b: &Shape) -> Result<(Shape, Expand, Expand)> {
    if a == b {
        return Ok((a.clone(), Expand::Same, Expand::Same));
    }
    if a.numel() == 1 && (b.numel() > 1 || b.rank() >= a.rank()) {
        return Ok((b.clone(), Expand::Scalar, Expand::Same));
    }
    if b.numel() == 1 {
        return Ok((a.clone(), Expand::Same, Expand::Scalar));
    }
    let is_row_of = |r: &Shape, full: &Shape| {
        full.rank() >= 2
            && r.last() == full.last()
            && (r.rank() == 1 || (r.rank() == 2 && r.dims()[0] == 1))
    };
    if is_row_of(b, a) {
        return Ok((a.clone(), Expand::Same, Expand::Row(a.last())));
    }
    if is_row_of(a, b) {
        return Ok((b.clone(), Expand::Row(b.last()), Expand::Same));
    }
    Err(Error::Shape {
        op,
        lhs: a.dims().to_vec(),
        rhs: b.dims().to_vec(),
    })
}

/// `c = op(a) · op(b) + beta · c` for row-major matrices, where `op(a)` is `m×k`
/// and `op(b)` is `k×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every strided access for these dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn accumulate<'a>(adj: &'a mut [Option<Vec<f64>>], id: usize, len: usize) -> &'a mut Vec<f64> {
    adj[id].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant: no gradient is accumulated for it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Concatenates along the trailing dimension.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let nodes = self.nodes.borrow();
        let base = nodes[first.id].value.shape().clone();
        if base.rank() == 0 {
            return Err(Error::invalid("concat", "scalar inputs"));
        }
        let rows = base.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            assert!(std::ptr::eq(p.tape, self), "concat: vars from a different tape");
            let s = nodes[p.id].value.shape();
            if s.rank() != base.rank() || s.dims()[..s.rank() - 1] != base.dims()[..base.rank() - 1] {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.dims().to_vec(),
                    rhs: s.dims().to_vec(),
                });
            }
            widths.push((p.id, s.last()));
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for &(id, w) in &widths {
            let src = nodes[id].value.data();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let requires = widths.iter().any(|&(id, _)| nodes[id].requires_grad);
        drop(nodes);
        Ok(self.push(Tensor::from_parts(base.with_last(total), data), Op::Concat(widths), requires))
    }

    /// Reverse-mode sweep from a scalar root. Gradients are added into every
    /// gradient-tracked leaf reachable from the root.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        assert!(std::ptr::eq(root.tape, self), "backward: root from a different tape");
        let mut nodes = self.nodes.borrow_mut();
        if nodes[root.id].value.numel() != 1 {
            return Err(Error::NonScalarRoot(nodes[root.id].value.dims().to_vec()));
        }
        if !nodes[root.id].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        adj[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = nodes[id].op {
                let node = &mut nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            let node = &nodes[id];
            let needs = |p: usize| nodes[p].requires_grad;
            match node.op {
                Op::Leaf => unreachable!(),
                Op::Binary(kind, a, b, ea, eb) => {
                    let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
                    if needs(a) {
                        let ga = accumulate(&mut adj, a, av.len());
                        for (i, &gi) in g.iter().enumerate() {
                            ga[ea.at(i)] += match kind {
                                Binary::Add | Binary::Sub => gi,
                                Binary::Mul => gi * bv[eb.at(i)],
                            };
                        }
                    }
                    if needs(b) {
                        let gb = accumulate(&mut adj, b, bv.len());
                        for (i, &gi) in g.iter().enumerate() {
                            gb[eb.at(i)] += match kind {
                                Binary::Add => gi,
                                Binary::Sub => -gi,
                                Binary::Mul => gi * av[ea.at(i)],
                            };
                        }
                    }
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (nodes[a].value.data(), nodes[b].value.data());
                    for (i, &gi) in g.iter().enumerate() {
                        let target = if av[i] <= bv[i] { a } else { b };
                        if needs(target) {
                            accumulate(&mut adj, target, av.len())[i] += gi;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (ad, bd) = (nodes[a].value.dims(), nodes[b].value.dims());
                    let (m, k, n) = (ad[0], ad[1], bd[1]);
                    if needs(a) {
                        let bv = nodes[b].value.data();
                        let ga = accumulate(&mut adj, a, m * k);
                        gemm(m, n, k, &g, false, bv, true, 1.0, ga);
                    }
                    if needs(b) {
                        let av = nodes[a].value.data();
                        let gb = accumulate(&mut adj, b, k * n);
                        gemm(k, m, n, av, true, &g, false, 1.0, gb);
                    }
                }
                Op::Unary(kind, a) => {
                    if needs(a) {
                        let x = nodes[a].value.data();
                        let y = node.value.data();
                        let ga = accumulate(&mut adj, a, x.len());
                        for i in 0..g.len() {
                            ga[i] += g[i]
                                * match kind {
                                    Unary::Tanh => 1.0 - y[i] * y[i],
                                    Unary::Sigmoid => y[i] * (1.0 - y[i]),
                                    Unary::Exp => y[i],
                                    Unary::Log => 1.0 / x[i],
                                    Unary::Square => 2.0 * x[i],
                                    Unary::Relu => {
                                        if x[i] > 0.0 {
                                            1.0
                                        } else {
                                            0.0
                                        }
                                    }
                                    Unary::Softplus => sigmoid(x[i]),
                                };
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if needs(a) {
                        let ga = accumulate(&mut adj, a, g.len());
                        ga.iter_mut().zip(&g).for_each(|(x, gi)| *x += c * gi);
                    }
                }
                Op::AddScalar(a) => {
                    if needs(a) {
                        let ga = accumulate(&mut adj, a, g.len());
                        ga.iter_mut().zip(&g).for_each(|(x, gi)| *x += gi);
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    if needs(a) {
                        let x = nodes[a].value.data();
                        let ga = accumulate(&mut adj, a, g.len());
                        for i in 0..g.len() {
                            if x[i] >= lo && x[i] <= hi {
                                ga[i] += g[i];
                            }
                        }
                    }
                }
                Op::Sum(a) | Op::Mean(a) => {
                    if needs(a) {
                        let n = nodes[a].value.numel();
                        let scale = if matches!(node.op, Op::Mean(_)) { 1.0 / n as f64 } else { 1.0 };
                        let ga = accumulate(&mut adj, a, n);
                        ga.iter_mut().for_each(|x| *x += g[0] * scale);
                    }
                }
                Op::SumLast(a) => {
                    if needs(a) {
                        let w = nodes[a].value.shape().last();
                        let ga = accumulate(&mut adj, a, g.len() * w);
                        for (i, x) in ga.iter_mut().enumerate() {
                            *x += g[i / w];
                        }
                    }
                }
                Op::Concat(ref widths) => {
                    let total: usize = widths.iter().map(|w| w.1).sum();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for &(p, w) in widths {
                        if needs(p) {
                            let gp = accumulate(&mut adj, p, rows * w);
                            for r in 0..rows {
                                for j in 0..w {
                                    gp[r * w + j] += g[r * total + offset + j];
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice(a, start, end) => {
                    if needs(a) {
                        let full = nodes[a].value.shape().last();
                        let w = end - start;
                        let rows = g.len() / w;
                        let ga = accumulate(&mut adj, a, rows * full);
                        for r in 0..rows {
                            for j in 0..w {
                                ga[r * full + start + j] += g[r * w + j];
                            }
                        }
                    }
                }
                Op::Broadcast(a, e) => {
                    if needs(a) {
                        let n = nodes[a].value.numel();
                        let ga = accumulate(&mut adj, a, n);
                        for (i, &gi) in g.iter().enumerate() {
                            ga[e.at(i)] += gi;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Shorthand for [`Tape::backward`] rooted at this var.
    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// The value of a one-element node.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn shape(&self) -> Shape {
        self.tape.nodes.borrow()[self.id].value.shape().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn is_finite(&self) -> bool {
        self.tape.nodes.borrow()[self.id].value.is_finite()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Tensor> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_parts(node.value.shape().clone(), g.clone()))
    }

    /// Like [`Var::grad`], with zeros when no gradient reached the node.
    pub fn grad_or_zeros(&self) -> Tensor {
        self.grad().unwrap_or_else(|| {
            let shape = self.shape();
            Tensor::from_parts(shape.clone(), vec![0.0; shape.numel()])
        })
    }

    /// A constant copy of this node's value, cutting gradient flow.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "operands recorded on different tapes");
    }

    fn binary(&self, other: Var<'t>, kind: Binary, name: &'static str) -> Result<Var<'t>> {
        self.same_tape(&other);
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id], &nodes[other.id]);
        let (shape, ea, eb) = broadcast_pair(name, a.value.shape(), b.value.shape())?;
        let (av, bv) = (a.value.data(), b.value.data());
        let n = shape.numel();
        let data: Vec<f64> = match kind {
            Binary::Add => (0..n).map(|i| av[ea.at(i)] + bv[eb.at(i)]).collect(),
            Binary::Sub => (0..n).map(|i| av[ea.at(i)] - bv[eb.at(i)]).collect(),
            Binary::Mul => (0..n).map(|i| av[ea.at(i)] * bv[eb.at(i)]).collect(),
        };
        let requires = a.requires_grad || b.requires_grad;
        drop(nodes);
        Ok(self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Binary(kind, self.id, other.id, ea, eb),
            requires,
        ))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add, "add")
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub, "sub")
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul, "mul")
    }

    /// Elementwise minimum of equally shaped operands; ties route the gradient to `self`.
    pub fn minimum(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id], &nodes[other.id]);
        if a.value.shape() != b.value.shape() {
            return Err(Error::Shape {
                op: "minimum",
                lhs: a.value.dims().to_vec(),
                rhs: b.value.dims().to_vec(),
            });
        }
        let data = a
            .value
            .data()
            .iter()
            .zip(b.value.data())
            .map(|(x, y)| x.min(*y))
            .collect();
        let shape = a.value.shape().clone();
        let requires = a.requires_grad || b.requires_grad;
        drop(nodes);
        Ok(self
            .tape
            .push(Tensor::from_parts(shape, data), Op::Minimum(self.id, other.id), requires))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id], &nodes[other.id]);
        let (ad, bd) = (a.value.dims(), b.value.dims());
        if ad.len() != 2 || bd.len() != 2 || ad[1] != bd[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ad.to_vec(),
                rhs: bd.to_vec(),
            });
        }
        let (m, k, n) = (ad[0], ad[1], bd[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, a.value.data(), false, b.value.data(), false, 0.0, &mut out);
        let requires = a.requires_grad || b.requires_grad;
        drop(nodes);
        Ok(self.tape.push(
            Tensor::from_parts(Shape::new(vec![m, n])?, out),
            Op::MatMul(self.id, other.id),
            requires,
        ))
    }

    fn unary(&self, kind: Unary) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id];
        let x = a.value.data();
        if let Unary::Log = kind {
            if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::Domain { op: "log", index, value });
            }
        }
        let f: fn(f64) -> f64 = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Square => |v| v * v,
            Unary::Relu => |v| v.max(0.0),
            Unary::Softplus => softplus,
        };
        let value = a.value.map(f);
        let requires = a.requires_grad;
        drop(nodes);
        Ok(self.tape.push(value, Op::Unary(kind, self.id), requires))
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Unary::Sigmoid)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(Unary::Exp)
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(&self) -> Result<Var<'t>> {
        self.unary(Unary::Log)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary(Unary::Square)
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Unary::Relu)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Result<Var<'t>> {
        self.unary(Unary::Softplus)
    }

    fn map_op(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id];
        let value = a.value.map(f);
        let requires = a.requires_grad;
        drop(nodes);
        self.tape.push(value, op, requires)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.map_op(Op::Scale(self.id, c), |v| c * v)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.map_op(Op::AddScalar(self.id), |v| v + c)
    }

    /// `c - self`.
    pub fn rsub_scalar(&self, c: f64) -> Var<'t> {
        self.neg().add_scalar(c)
    }

    /// Hard clamp into `[lo, hi]`; the gradient passes only where the input lies inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        if !(lo <= hi) {
            return Err(Error::invalid("clamp", format!("empty interval [{lo}, {hi}]")));
        }
        Ok(self.map_op(Op::Clamp(self.id, lo, hi), |v| v.clamp(lo, hi)))
    }

    fn reduce(&self, op: Op, mean: bool) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id];
        let mut s = a.value.sum();
        if mean {
            s /= a.value.numel() as f64;
        }
        let requires = a.requires_grad;
        drop(nodes);
        self.tape.push(Tensor::scalar(s), op, requires)
    }

    pub fn sum(&self) -> Var<'t> {
        self.reduce(Op::Sum(self.id), false)
    }

    pub fn mean(&self) -> Var<'t> {
        self.reduce(Op::Mean(self.id), true)
    }

    /// Sums over the trailing dimension, keeping it with width 1.
    pub fn sum_last(&self) -> Var<'t> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id];
        let w = a.value.shape().last();
        let data: Vec<f64> = a.value.data().chunks(w).map(|c| c.iter().sum()).collect();
        let shape = a.value.shape().with_last(1);
        let requires = a.requires_grad;
        drop(nodes);
        self.tape
            .push(Tensor::from_parts(shape, data), Op::SumLast(self.id), requires)
    }

    /// Columns `start..end` of the trailing dimension.
    pub fn slice(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id];
        let full = a.value.shape().last();
        if a.value.shape().rank() == 0 || start >= end || end > full {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{end} out of bounds for shape {:?}", a.value.shape()),
            ));
        }
        let w = end - start;
        let data: Vec<f64> = a
            .value
            .data()
            .chunks(full)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let shape = a.value.shape().with_last(w);
        let requires = a.requires_grad;
        drop(nodes);
        Ok(self.tape.push(
            Tensor::from_parts(shape, data),
            Op::Slice(self.id, start, end),
            requires,
        ))
    }

    /// Explicit broadcast of a scalar or row vector to `dims`.
    pub fn broadcast(&self, dims: &[usize]) -> Result<Var<'t>> {
        let target = Shape::new(dims.to_vec())?;
        let nodes = self.tape.nodes.borrow();
        let a = &nodes[self.id];
        let (shape, ea, et) = broadcast_pair("broadcast", a.value.shape(), &target)?;
        if shape != target || et != Expand::Same {
            return Err(Error::Shape {
                op: "broadcast",
                lhs: a.value.dims().to_vec(),
                rhs: dims.to_vec(),
            });
        }
        let av = a.value.data();
        let data = (0..target.numel()).map(|i| av[ea.at(i)]).collect();
        let requires = a.requires_grad;
        drop(nodes);
        Ok(self
            .tape
            .push(Tensor::from_parts(target, data), Op::Broadcast(self.id, ea), requires))
    }
}
