//! Reverse-mode differentiation over a tape of matrix operations.

use std::rc::Rc;

use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Const,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Abs(Var),
    Square(Var),
    Softmax(Var),
    Normalize(Var, Vec<f64>),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Gather(Var, Rc<Vec<Option<usize>>>),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A tape of tensor operations. Build the forward pass with the methods
/// below, then call [`Graph::backward`] on a scalar output.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients for every node of a graph after a backward pass.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "not a scalar");
        t.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    /// Leaf bound to a parameter block; its gradient is scattered back into
    /// the flat gradient vector by [`Graph::param_grads`].
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        let s = params.shape(id);
        let t = Tensor::from_vec(s.rows, s.cols, params.slice(id).to_vec());
        self.push(t, Op::Param(s.offset))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        let v = Tensor::from_vec(x.rows, x.cols, data);
        self.push(v, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    fn broadcast_row(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert_eq!((1, x.cols), r.shape(), "row broadcast shape mismatch");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, &q) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o = f(*o, q);
            }
        }
        self.push(v, op)
    }

    /// `a + 1·b` with `b` a `1 × n` row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        self.broadcast_row(a, b, |p, q| p + q, Op::AddRow(a, b))
    }

    /// `a ⊙ 1·b` with `b` a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        self.broadcast_row(a, b, |p, q| p * q, Op::MulRow(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Row-wise softmax. `-inf` entries get exactly zero weight.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(v, Op::Softmax(a))
    }

    /// Row-wise standardisation `(x − mean) / sqrt(var + eps)`.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let n = v.cols as f64;
        let mut inv = Vec::with_capacity(v.rows);
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let r = 1.0 / (var + NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * r;
            }
            inv.push(r);
        }
        self.push(v, Op::Normalize(a, inv))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for i in 0..rows {
                v.row_mut(i)[off..off + t.cols].copy_from_slice(t.row(i));
            }
            off += t.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols);
        let mut v = Tensor::zeros(t.rows, len);
        for i in 0..t.rows {
            v.row_mut(i).copy_from_slice(&t.row(i)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows);
        let v = Tensor::from_vec(len, t.cols, t.data[start * t.cols..(start + len) * t.cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    /// Element gather: output element `k` is input element `index[k]`, or
    /// zero for `None`.
    pub fn gather(&mut self, a: Var, index: Rc<Vec<Option<usize>>>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols);
        let t = self.value(a);
        let data = index.iter().map(|i| i.map_or(0.0, |i| t.data[i])).collect();
        self.push(Tensor::from_vec(rows, cols, data), Op::Gather(a, index))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).data.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `x · W + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    /// Back-propagates from the scalar `out`.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=out.0).rev() {
            let Some(d) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Const | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = d.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&d);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, d.clone());
                    acc(&mut grads, *b, d.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, d.map(|x| -x));
                    acc(&mut grads, *a, d.clone());
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&d, self.value(*b), |g, q| g * q);
                    let gb = zip_map(&d, self.value(*a), |g, p| g * p);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, col_sum(&d));
                    acc(&mut grads, *a, d.clone());
                }
                Op::MulRow(a, b) => {
                    let r = self.value(*b);
                    let x = self.value(*a);
                    let mut ga = d.clone();
                    let mut gb = Tensor::zeros(1, d.cols);
                    for i in 0..d.rows {
                        for j in 0..d.cols {
                            ga.data[i * d.cols + j] *= r.data[j];
                            gb.data[j] += d.data[i * d.cols + j] * x.data[i * d.cols + j];
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, d.map(|g| g * c)),
                Op::AddScalar(a) => acc(&mut grads, *a, d.clone()),
                Op::Tanh(a) => acc(&mut grads, *a, zip_map(&d, y, |g, t| g * (1.0 - t * t))),
                Op::Relu(a) => acc(&mut grads, *a, zip_map(&d, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
                Op::Softplus(a) => acc(&mut grads, *a, zip_map(&d, self.value(*a), |g, x| g * sigmoid(x))),
                Op::Abs(a) => acc(&mut grads, *a, zip_map(&d, self.value(*a), |g, x| g * sign(x))),
                Op::Square(a) => acc(&mut grads, *a, zip_map(&d, self.value(*a), |g, x| 2.0 * g * x)),
                Op::Softmax(a) => {
                    let mut ga = Tensor::zeros(d.rows, d.cols);
                    for i in 0..d.rows {
                        let (dr, yr) = (d.row(i), y.row(i));
                        let dot: f64 = dr.iter().zip(yr).map(|(g, p)| g * p).sum();
                        for (o, (g, p)) in ga.row_mut(i).iter_mut().zip(dr.iter().zip(yr)) {
                            *o = p * (g - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Normalize(a, inv) => {
                    let n = d.cols as f64;
                    let mut ga = Tensor::zeros(d.rows, d.cols);
                    for i in 0..d.rows {
                        let (dr, yr) = (d.row(i), y.row(i));
                        let mean_d = dr.iter().sum::<f64>() / n;
                        let mean_dy = dr.iter().zip(yr).map(|(g, p)| g * p).sum::<f64>() / n;
                        for (o, (g, p)) in ga.row_mut(i).iter_mut().zip(dr.iter().zip(yr)) {
                            *o = inv[i] * (g - mean_d - p * mean_dy);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, d.transpose()),
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut g = Tensor::zeros(d.rows, cols);
                        for i in 0..d.rows {
                            g.row_mut(i).copy_from_slice(&d.row(i)[off..off + cols]);
                        }
                        off += cols;
                        acc(&mut grads, p, g);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let n = t.rows * t.cols;
                        acc(&mut grads, p, Tensor::from_vec(t.rows, t.cols, d.data[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let t = self.value(*a);
                    let mut g = Tensor::zeros(t.rows, t.cols);
                    for i in 0..d.rows {
                        g.row_mut(i)[*start..*start + d.cols].copy_from_slice(d.row(i));
                    }
                    acc(&mut grads, *a, g);
                }
                Op::SliceRows(a, start) => {
                    let t = self.value(*a);
                    let mut g = Tensor::zeros(t.rows, t.cols);
                    g.data[start * t.cols..start * t.cols + d.data.len()].copy_from_slice(&d.data);
                    acc(&mut grads, *a, g);
                }
                Op::Gather(a, index) => {
                    let t = self.value(*a);
                    let mut g = Tensor::zeros(t.rows, t.cols);
                    for (k, i) in index.iter().enumerate() {
                        if let Some(i) = i {
                            g.data[*i] += d.data[k];
                        }
                    }
                    acc(&mut grads, *a, g);
                }
                Op::Sum(a) => {
                    let t = self.value(*a);
                    acc(&mut grads, *a, Tensor::filled(t.rows, t.cols, d.data[0]));
                }
            }
            grads[idx] = Some(d);
        }
        Grads { grads }
    }

    /// Adds every parameter leaf's gradient into `flat` at its offset.
    pub fn param_grads(&self, grads: &Grads, flat: &mut [f64]) {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(offset), Some(g)) = (&node.op, g) {
                for (dst, src) in flat[*offset..*offset + g.data.len()].iter_mut().zip(&g.data) {
                    *dst += src;
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&p, &q)| f(p, q)).collect())
}

fn col_sum(d: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, d.cols);
    for i in 0..d.rows {
        for (o, g) in out.data.iter_mut().zip(d.row(i)) {
            *o += g;
        }
    }
    out
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.max(0.0) + (-x.abs()).exp().ln_1p() }
}
