//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation eagerly (values are computed as nodes
//! are pushed) and [`Tape::backward`] walks the records in reverse. Nodes
//! created with [`Tape::constant`] never receive gradients, and neither does
//! anything computed purely from constants, so "detaching" a value is just
//! re-inserting it as a constant. Gradients through a detached path are
//! exactly zero, not merely small.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{dot, gemm_nn_acc, gemm_nt_acc, gemm_tn_acc, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Silu(Var),
    Exp(Var),
    Sqrt(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Matrix, rstd: Vec<f64> },
    NormalizeRows { x: Var, norms: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, index: Vec<Option<usize>> },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    CrossEntropyRows { logits: Var, targets: Vec<usize>, probs: Matrix },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `None` when no gradient reached the node (it is then identically zero).
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, materialised as zeros when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m.as_slice()[0]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::MatMulNT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(row), |x, r| x + r);
        let rg = self.any_grad(&[a, row]);
        self.push(value, Op::AddRow(a, row), rg)
    }

    /// Multiplies every row of `a` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(row), |x, r| x * r);
        let rg = self.any_grad(&[a, row]);
        self.push(value, Op::MulRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Offset(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, math::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, math::softplus, Op::Softplus(a))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * math::sigmoid(x), Op::Silu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, math::exp, Op::Exp(a))
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, |x| math::sqrt(x.max(0.0)), Op::Sqrt(a))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        self.push(value, op, rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.any_grad(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise layer normalisation with `1×n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        assert_eq!(self.shape(gain), (1, cols), "layer_norm gain shape");
        assert_eq!(self.shape(bias), (1, cols), "layer_norm bias shape");
        let mut normed = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / math::sqrt(var + eps);
            rstd.push(inv);
            for (o, v) in normed.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let g = self.value(gain).as_slice();
        let b = self.value(bias).as_slice();
        let mut out = normed.clone();
        for r in 0..rows {
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = *o * g[c] + b[c];
            }
        }
        let rg = self.any_grad(&[x, gain, bias]);
        self.push(out, Op::LayerNorm { x, gain, bias, normed, rstd }, rg)
    }

    /// Scales each row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let n = math::sqrt(dot(xv.row(r), xv.row(r))).max(1e-12);
            norms.push(n);
            for v in out.row_mut(r) {
                *v /= n;
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(out, Op::NormalizeRows { x, norms }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        let rg = self.any_grad(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(v.as_slice());
            rows += v.rows();
        }
        let rg = self.any_grad(parts);
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let out = Matrix::from_fn(xv.rows(), len, |r, c| xv.get(r, start + c));
        let rg = self.any_grad(&[x]);
        self.push(out, Op::SliceCols { x, start }, rg)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.rows(), "slice_rows out of range");
        let c = xv.cols();
        let out = Matrix::from_vec(len, c, xv.as_slice()[start * c..(start + len) * c].to_vec());
        let rg = self.any_grad(&[x]);
        self.push(out, Op::SliceRows { x, start }, rg)
    }

    /// Row `i` of the result is row `index[i]` of `x`, or zeros for `None`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<Option<usize>>) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(index.len(), xv.cols());
        for (o, i) in index.iter().enumerate() {
            if let Some(i) = *i {
                out.row_mut(o).copy_from_slice(xv.row(i));
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(out, Op::GatherRows { x, index }, rg)
    }

    pub fn select_rows(&mut self, x: Var, index: &[usize]) -> Var {
        self.gather_rows(x, index.iter().map(|&i| Some(i)).collect())
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(x).clone().reshape(rows, cols);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Reshape(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        self.push(Matrix::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.sum() / v.len() as f64;
        let rg = self.any_grad(&[x]);
        self.push(Matrix::scalar(s), Op::Mean(x), rg)
    }

    /// Column means, as a `1×n` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut out = Matrix::zeros(1, v.cols());
        for r in 0..v.rows() {
            for (o, a) in out.as_mut_slice().iter_mut().zip(v.row(r)) {
                *o += a;
            }
        }
        let inv = 1.0 / v.rows() as f64;
        let out = out.scale(inv);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::MeanRows(x), rg)
    }

    /// Sum of squares of all entries.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let sq = self.mul(x, x);
        self.sum(sq)
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "one target per row");
        let mut probs = lv.clone();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + math::ln(row.iter().map(|v| math::exp(v - max)).sum::<f64>());
            loss += lse - row[t];
            softmax_in_place(probs.row_mut(r));
        }
        let n = targets.len() as f64;
        let rg = self.any_grad(&[logits]);
        self.push(Matrix::scalar(loss / n), Op::CrossEntropyRows { logits, targets, probs }, rg)
    }

    /// Backpropagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let acc = slot(grads, *a, av.shape());
                    gemm_nt_acc(g.as_slice(), bv.as_slice(), acc.as_mut_slice(), g.rows(), g.cols(), bv.rows());
                }
                if self.requires_grad(*b) {
                    let acc = slot(grads, *b, bv.shape());
                    gemm_tn_acc(av.as_slice(), g.as_slice(), acc.as_mut_slice(), av.rows(), av.cols(), g.cols());
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let acc = slot(grads, *a, av.shape());
                    gemm_nn_acc(g.as_slice(), bv.as_slice(), acc.as_mut_slice(), g.rows(), g.cols(), bv.cols());
                }
                if self.requires_grad(*b) {
                    let acc = slot(grads, *b, bv.shape());
                    gemm_tn_acc(g.as_slice(), av.as_slice(), acc.as_mut_slice(), g.rows(), g.cols(), av.cols());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |acc| acc.add_assign(g));
                self.accumulate(grads, *b, |acc| acc.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |acc| acc.add_assign(g));
                self.accumulate(grads, *b, |acc| {
                    for (o, v) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |acc| axpy_prod(acc, g, bv));
                self.accumulate(grads, *b, |acc| axpy_prod(acc, g, av));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, |acc| acc.add_assign(g));
                self.accumulate(grads, *row, |acc| {
                    for r in 0..g.rows() {
                        for (o, v) in acc.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                self.accumulate(grads, *a, |acc| {
                    for r in 0..g.rows() {
                        for ((o, gv), s) in acc.row_mut(r).iter_mut().zip(g.row(r)).zip(rv.as_slice()) {
                            *o += gv * s;
                        }
                    }
                });
                self.accumulate(grads, *row, |acc| {
                    for r in 0..g.rows() {
                        for ((o, gv), x) in acc.as_mut_slice().iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *o += gv * x;
                        }
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, |acc| {
                    for (o, v) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o += v * s;
                    }
                });
            }
            Op::Offset(a) => self.accumulate(grads, *a, |acc| acc.add_assign(g)),
            Op::Sigmoid(a) => {
                let y = &node.value;
                self.elementwise(grads, *a, g, |i, _| y.as_slice()[i] * (1.0 - y.as_slice()[i]));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                self.elementwise(grads, *a, g, |i, _| 1.0 - y.as_slice()[i] * y.as_slice()[i]);
            }
            Op::Softplus(a) => self.elementwise(grads, *a, g, |_, x| math::sigmoid(x)),
            Op::Silu(a) => self.elementwise(grads, *a, g, |_, x| {
                let s = math::sigmoid(x);
                s + x * s * (1.0 - s)
            }),
            Op::Exp(a) => {
                let y = &node.value;
                self.elementwise(grads, *a, g, |i, _| y.as_slice()[i]);
            }
            Op::Sqrt(a) => {
                let y = &node.value;
                self.elementwise(grads, *a, g, |i, _| {
                    let s = y.as_slice()[i];
                    if s > 0.0 {
                        0.5 / s
                    } else {
                        0.0
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, |acc| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = dot(yr, gr);
                        for ((o, yv), gv) in acc.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += yv * (gv - inner);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, normed, rstd } => {
                let gv = self.value(*gain).as_slice();
                let cols = normed.cols() as f64;
                self.accumulate(grads, *x, |acc| {
                    for r in 0..normed.rows() {
                        let gr = g.row(r);
                        let nr = normed.row(r);
                        let mut mean_dn = 0.0;
                        let mut mean_dn_n = 0.0;
                        for c in 0..nr.len() {
                            let dn = gr[c] * gv[c];
                            mean_dn += dn;
                            mean_dn_n += dn * nr[c];
                        }
                        mean_dn /= cols;
                        mean_dn_n /= cols;
                        for (c, o) in acc.row_mut(r).iter_mut().enumerate() {
                            let dn = gr[c] * gv[c];
                            *o += rstd[r] * (dn - mean_dn - nr[c] * mean_dn_n);
                        }
                    }
                });
                self.accumulate(grads, *gain, |acc| {
                    for r in 0..g.rows() {
                        for ((o, gv), n) in acc.as_mut_slice().iter_mut().zip(g.row(r)).zip(normed.row(r)) {
                            *o += gv * n;
                        }
                    }
                });
                self.accumulate(grads, *bias, |acc| {
                    for r in 0..g.rows() {
                        for (o, gv) in acc.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                });
            }
            Op::NormalizeRows { x, norms } => {
                let y = &node.value;
                self.accumulate(grads, *x, |acc| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = dot(yr, gr);
                        for ((o, yv), gv) in acc.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += (gv - yv * inner) / norms[r];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    self.accumulate(grads, p, |acc| {
                        for r in 0..g.rows() {
                            for (o, v) in acc.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                *o += v;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                let cols = g.cols();
                for &p in parts {
                    let n = self.shape(p).0 * cols;
                    self.accumulate(grads, p, |acc| {
                        for (o, v) in acc.as_mut_slice().iter_mut().zip(&g.as_slice()[off..off + n]) {
                            *o += v;
                        }
                    });
                    off += n;
                }
            }
            Op::SliceCols { x, start } => {
                let start = *start;
                self.accumulate(grads, *x, |acc| {
                    for r in 0..g.rows() {
                        for (o, v) in acc.row_mut(r)[start..start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let off = start * g.cols();
                self.accumulate(grads, *x, |acc| {
                    for (o, v) in acc.as_mut_slice()[off..off + g.len()].iter_mut().zip(g.as_slice()) {
                        *o += v;
                    }
                });
            }
            Op::GatherRows { x, index } => {
                self.accumulate(grads, *x, |acc| {
                    for (o, i) in index.iter().enumerate() {
                        if let Some(i) = *i {
                            for (a, v) in acc.row_mut(i).iter_mut().zip(g.row(o)) {
                                *a += v;
                            }
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |acc| {
                    for (o, v) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *o += v;
                    }
                });
            }
            Op::Sum(x) => {
                let s = g.as_slice()[0];
                self.accumulate(grads, *x, |acc| acc.as_mut_slice().iter_mut().for_each(|o| *o += s));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let s = g.as_slice()[0] / n;
                self.accumulate(grads, *x, |acc| acc.as_mut_slice().iter_mut().for_each(|o| *o += s));
            }
            Op::MeanRows(x) => {
                let rows = self.shape(*x).0;
                let inv = 1.0 / rows as f64;
                self.accumulate(grads, *x, |acc| {
                    for r in 0..rows {
                        for (o, v) in acc.row_mut(r).iter_mut().zip(g.as_slice()) {
                            *o += v * inv;
                        }
                    }
                });
            }
            Op::CrossEntropyRows { logits, targets, probs } => {
                let s = g.as_slice()[0] / targets.len() as f64;
                self.accumulate(grads, *logits, |acc| {
                    for (r, &t) in targets.iter().enumerate() {
                        for (c, (o, p)) in acc.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            *o += s * (p - onehot);
                        }
                    }
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, f: impl FnOnce(&mut Matrix)) {
        if !self.requires_grad(v) {
            return;
        }
        let acc = slot(grads, v, self.shape(v));
        f(acc);
    }

    /// `grad[v] += g ⊙ d(x)` where `d` receives the flat index and input value.
    fn elementwise(&self, grads: &mut [Option<Matrix>], v: Var, g: &Matrix, d: impl Fn(usize, f64) -> f64) {
        if !self.requires_grad(v) {
            return;
        }
        let x = self.value(v).as_slice();
        let acc = slot(grads, v, self.shape(v));
        for (i, (o, gv)) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
            *o += gv * d(i, x[i]);
        }
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn axpy_prod(acc: &mut Matrix, g: &Matrix, other: &Matrix) {
    for ((o, gv), x) in acc.as_mut_slice().iter_mut().zip(g.as_slice()).zip(other.as_slice()) {
        *o += gv * x;
    }
}

fn broadcast_row(a: &Matrix, row: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(row.shape(), (1, a.cols()), "row broadcast shape mismatch");
    let r = row.as_slice();
    let mut out = a.clone();
    for i in 0..out.rows() {
        for (o, rv) in out.row_mut(i).iter_mut().zip(r) {
            *o = f(*o, *rv);
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = math::exp(*v - max);
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::boxed::Box;

    type Build = Box<dyn Fn(&mut Tape, Var) -> Var>;

    /// Central-difference check of d(build(x))/dx for every entry of `x`.
    fn check(x: Matrix, build: Build) {
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let y = build(&mut t, xv);
        let g = t.backward(y).get_or_zeros(xv, x.shape());
        let h = 1e-6;
        for i in 0..x.len() {
            let eval = |delta: f64| {
                let mut xp = x.clone();
                xp.as_mut_slice()[i] += delta;
                let mut t = Tape::new();
                let v = t.leaf(xp);
                let y = build(&mut t, v);
                t.scalar(y)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.as_slice()[i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "entry {i}: fd {fd} vs analytic {an}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn matmul_family() {
        let w = sample(4, 3, 7);
        let w2 = w.clone();
        check(sample(5, 4, 1), Box::new(move |t, x| {
            let c = t.constant(w2.clone());
            let y = t.matmul(x, c);
            t.sum_squares(y)
        }));
        check(sample(5, 4, 2), Box::new(move |t, x| {
            let c = t.constant(w.transpose());
            let y = t.matmul_nt(x, c);
            let y2 = t.matmul_nt(c, x);
            let s = t.sum_squares(y);
            let s2 = t.sum_squares(y2);
            t.add(s, s2)
        }));
    }

    #[test]
    fn activations() {
        check(sample(3, 4, 3), Box::new(|t, x| {
            let a = t.sigmoid(x);
            let b = t.tanh(x);
            let c = t.softplus(x);
            let d = t.silu(x);
            let e = t.exp(x);
            let s = t.concat_cols(&[a, b, c, d, e]);
            let w = t.constant(sample(20, 2, 9));
            let y = t.matmul(s, w);
            t.sum_squares(y)
        }));
        check(sample(3, 4, 4).map(|v| v.abs() + 0.1), Box::new(|t, x| {
            let y = t.sqrt(x);
            let w = t.constant(sample(3, 4, 5));
            let p = t.mul(y, w);
            t.sum(p)
        }));
    }

    #[test]
    fn normalisations_and_softmax() {
        check(sample(4, 6, 11), Box::new(|t, x| {
            let g = t.constant(sample(1, 6, 12));
            let b = t.constant(sample(1, 6, 13));
            let y = t.layer_norm(x, g, b, 1e-5);
            let w = t.constant(sample(4, 6, 14));
            let p = t.mul(y, w);
            t.sum(p)
        }));
        check(sample(4, 6, 15), Box::new(|t, x| {
            let y = t.softmax_rows(x);
            let n = t.normalize_rows(x);
            let w = t.constant(sample(4, 6, 16));
            let p = t.mul(y, w);
            let q = t.mul(n, w);
            let a = t.sum(p);
            let b = t.sum(q);
            let c = t.cross_entropy_rows(x, alloc::vec![0, 5, 2, 3]);
            let ab = t.add(a, b);
            t.add(ab, c)
        }));
    }

    #[test]
    fn layer_norm_parameters() {
        let x = sample(4, 6, 21);
        check(sample(1, 6, 22), Box::new(move |t, g| {
            let xv = t.constant(x.clone());
            let b = t.constant(sample(1, 6, 23));
            let y = t.layer_norm(xv, g, b, 1e-5);
            let w = t.constant(sample(4, 6, 24));
            let p = t.mul(y, w);
            t.sum(p)
        }));
    }

    #[test]
    fn structural_ops() {
        check(sample(6, 4, 31), Box::new(|t, x| {
            let a = t.slice_cols(x, 1, 2);
            let b = t.slice_rows(x, 2, 3);
            let c = t.gather_rows(x, alloc::vec![Some(5), None, Some(0), Some(5)]);
            let r = t.reshape(c, 2, 8);
            let row = t.constant(sample(1, 2, 32));
            let a2 = t.mul_row(a, row);
            let a3 = t.add_row(a2, row);
            let m = t.mean_rows(b);
            let s1 = t.sum_squares(a3);
            let s2 = t.sum_squares(m);
            let s3 = t.sum_squares(r);
            let cat = t.concat_rows(&[x, x]);
            let s4 = t.mean(cat);
            let s5 = t.scale(s4, 3.0);
            let s6 = t.add_scalar(s5, 1.0);
            let u = t.add(s1, s2);
            let u = t.add(u, s3);
            t.add(u, s6)
        }));
    }

    #[test]
    fn detached_paths_get_exact_zero() {
        let mut t = Tape::new();
        let x = t.leaf(sample(3, 3, 41));
        let d = t.detach(x);
        let y = t.mul(d, d);
        let live = t.slice_rows(x, 0, 1);
        let s = t.sum(y);
        let l = t.sum_squares(live);
        let total = t.add(s, l);
        let g = t.backward(total).get_or_zeros(x, (3, 3));
        assert!(g.row(1).iter().chain(g.row(2)).all(|&v| v == 0.0));
        assert!(g.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn constant_only_graph_has_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(2.0));
        let y = t.mul(c, c);
        assert!(!t.requires_grad(y));
        let g = t.backward(y);
        assert!(g.get(c).is_none());
    }
}
