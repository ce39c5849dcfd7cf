//! Tensor-level reverse-mode differentiation.
//!
//! Every primitive appends one node holding its forward value. `backward`
//! walks the nodes from the loss towards the leaves, which is a reverse
//! topological order because inputs always precede their consumers.

use alloc::vec::Vec;

use super::{Real, Tensor, LAYER_NORM_EPS, PROB_FLOOR};
use crate::{ComponentSpan, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Const,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, S),
    Mask(Var, Tensor<S>),
    Relu(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    PoolSpans(Var, Vec<ComponentSpan>),
    SoftmaxRows(Var),
    /// Stores `1/sqrt(var + eps)` per row; the normalized rows are the node value.
    LayerNormRows(Var, Vec<S>),
    /// Stores softmax probabilities, gold classes and per-row weights.
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Tensor<S>,
        gold: Vec<usize>,
        weights: Vec<S>,
    },
    SumSquares(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Record of primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<(usize, usize)>,
}

impl<S: Real> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<S> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Trainable input; receives a gradient.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Fixed input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Const,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.shape(a),
            right: self.shape(b),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(self.mismatch("add_row", a, row));
        }
        let value = Tensor::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) + r.get(0, j));
        self.push("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of `a` elementwise by a `1 x n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(self.mismatch("mul_row", a, row));
        }
        let value = Tensor::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) * r.get(0, j));
        self.push("mul_row", value, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: S) -> Result<Var> {
        let value = self.value(a).scale(c);
        self.push("scale", value, Op::Scale(a, c), &[a])
    }

    /// Elementwise product with a fixed tensor (dropout masks).
    pub fn mask(&mut self, a: Var, mask: Tensor<S>) -> Result<Var> {
        let value = self.value(a).hadamard(&mask)?;
        self.push("mask", value, Op::Mask(a, mask), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| if v > S::zero() { v } else { S::zero() });
        self.push("relu", value, Op::Relu(a), &[a])
    }

    /// Output row `r` is input row `indices[r]`.
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "row index {bad} out of range for {} rows",
                x.rows()
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * x.cols());
        for &i in &indices {
            data.extend_from_slice(x.row(i));
        }
        let value = Tensor::new(indices.len(), x.cols(), data)?;
        self.push("gather_rows", value, Op::GatherRows(a, indices), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(rows, cols, data)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Row `i` of the output is the mean of input rows `spans[i].start..=spans[i].end`.
    pub fn pool_spans(&mut self, a: Var, spans: &[ComponentSpan]) -> Result<Var> {
        let x = self.value(a);
        let mut value = Tensor::zeros(spans.len(), x.cols());
        for (i, span) in spans.iter().enumerate() {
            if span.start > span.end || span.end >= x.rows() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "span ({}, {}) out of range for {} rows",
                    span.start,
                    span.end,
                    x.rows()
                )));
            }
            let out = value.row_mut(i);
            for r in span.start..=span.end {
                for (o, &v) in out.iter_mut().zip(x.row(r)) {
                    *o += v;
                }
            }
            let inv = S::one() / S::of(span.len() as f64);
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        self.push("pool_spans", value, Op::PoolSpans(a, spans.to_vec()), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut value = x.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        self.push("softmax_rows", value, Op::SoftmaxRows(a), &[a])
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layernorm_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = S::of(x.cols() as f64);
        let eps = S::of(LAYER_NORM_EPS);
        let mut value = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = value.row_mut(r);
            let mean = row.iter().fold(S::zero(), |acc, &v| acc + v) / n;
            let var = row.iter().fold(S::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
            let inv = S::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push("layernorm_rows", value, Op::LayerNormRows(a, inv_std), &[a])
    }

    /// Weighted sum over rows of `-ln softmax(logits)[gold]`, as a 1x1 tensor.
    ///
    /// `weights[c]` scales the term of every row whose gold class is `c`;
    /// pass an empty slice for unit weights.
    pub fn softmax_cross_entropy(&mut self, logits: Var, gold: &[usize], class_weights: &[S]) -> Result<Var> {
        let x = self.value(logits);
        if gold.len() != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: x.shape(),
                right: (gold.len(), 1),
            });
        }
        if !class_weights.is_empty() && class_weights.len() != x.cols() {
            return Err(Error::DimensionMismatch {
                what: "class weights",
                expected: x.cols(),
                found: class_weights.len(),
            });
        }
        let mut probs = x.clone();
        let mut weights = Vec::with_capacity(gold.len());
        let mut loss = S::zero();
        let floor = S::of(PROB_FLOOR);
        for (r, &g) in gold.iter().enumerate() {
            if g >= x.cols() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "gold class {g} out of range for {} classes",
                    x.cols()
                )));
            }
            let row = probs.row_mut(r);
            softmax_in_place(row);
            let w = class_weights.get(g).copied().unwrap_or_else(S::one);
            loss += w * -(row[g].max(floor)).ln();
            weights.push(w);
        }
        let op = Op::SoftmaxCrossEntropy {
            logits,
            probs,
            gold: gold.to_vec(),
            weights,
        };
        self.push("softmax_cross_entropy", Tensor::scalar(loss), op, &[logits])
    }

    pub fn sum_squares(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).squared_norm());
        self.push("sum_squares", value, Op::SumSquares(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    /// Gradients of the 1x1 node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }
        if !grads.iter().flatten().all(Tensor::is_finite) {
            return Err(Error::NonFinite { op: "backward" });
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], v: Var, delta: Tensor<S>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot => {
                *slot = Some(delta);
                Ok(())
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op<S>, out: &Tensor<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) -> Result<()> {
        match op {
            Op::Leaf | Op::Const => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let d = g.matmul(&self.value(*b).transpose())?;
                    self.accumulate(grads, *a, d)?;
                }
                if self.needs(*b) {
                    let d = self.value(*a).transpose().matmul(g)?;
                    self.accumulate(grads, *b, d)?;
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose())?,
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *row, g.column_sums())?;
            }
            Op::MulRow(a, row) => {
                let (x, r) = (self.value(*a), self.value(*row));
                if self.needs(*a) {
                    let d = Tensor::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * r.get(0, j));
                    self.accumulate(grads, *a, d)?;
                }
                if self.needs(*row) {
                    self.accumulate(grads, *row, g.hadamard(x)?.column_sums())?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c))?,
            Op::Mask(a, mask) => self.accumulate(grads, *a, g.hadamard(mask)?)?,
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = g.zip(x, |gv, xv| if xv > S::zero() { gv } else { S::zero() });
                self.accumulate(grads, *a, d)?;
            }
            Op::GatherRows(a, indices) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Tensor::zeros(rows, cols);
                for (r, &i) in indices.iter().enumerate() {
                    for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.needs(p) {
                        let d = Tensor::from_fn(rows, cols, |i, j| g.get(i, offset + j));
                        self.accumulate(grads, p, d)?;
                    }
                    offset += cols;
                }
            }
            Op::PoolSpans(a, spans) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Tensor::zeros(rows, cols);
                for (i, span) in spans.iter().enumerate() {
                    let inv = S::one() / S::of(span.len() as f64);
                    for r in span.start..=span.end {
                        for (o, &v) in d.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v * inv;
                        }
                    }
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::SoftmaxRows(a) => {
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let dot = y.iter().zip(gr).fold(S::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::LayerNormRows(a, inv_std) => {
                let n = S::of(out.cols() as f64);
                let mut d = Tensor::zeros(out.rows(), out.cols());
                for (r, &istd) in inv_std.iter().enumerate() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let g_mean = gr.iter().fold(S::zero(), |acc, &v| acc + v) / n;
                    let gy_mean = y.iter().zip(gr).fold(S::zero(), |acc, (&yv, &gv)| acc + yv * gv) / n;
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = istd * (gv - g_mean - yv * gy_mean);
                    }
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                gold,
                weights,
            } => {
                let upstream = g.get(0, 0);
                let floor = S::of(PROB_FLOOR);
                let mut d = Tensor::zeros(probs.rows(), probs.cols());
                for (r, &gc) in gold.iter().enumerate() {
                    let p = probs.row(r);
                    // Below the floor the loss is constant in the logits.
                    if p[gc] < floor {
                        continue;
                    }
                    let scale = upstream * weights[r];
                    for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                        let target = if c == gc { S::one() } else { S::zero() };
                        *o = scale * (p[c] - target);
                    }
                }
                self.accumulate(grads, *logits, d)?;
            }
            Op::SumSquares(a) => {
                let c = g.get(0, 0) * S::of(2.0);
                self.accumulate(grads, *a, self.value(*a).scale(c))?;
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(rows, cols, g.get(0, 0)))?;
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax with max subtraction.
pub(crate) fn softmax_in_place<S: Real>(row: &mut [S]) {
    let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn sum_gives_all_ones_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[&[1.0, -2.0], &[3.0, 0.5]]));
        let loss = tape.sum(w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w), Tensor::filled(2, 2, 1.0));
    }

    #[test]
    fn zero_scaled_loss_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[&[1.0, -2.0, 0.3]]));
        let sq = tape.sum_squares(w).unwrap();
        let loss = tape.scale(sq, 0.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(w).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn untouched_leaf_gets_zeros() {
        let mut tape = Tape::new();
        let used = tape.leaf(t(&[&[1.0]]));
        let unused = tape.leaf(t(&[&[1.0, 2.0]]));
        let loss = tape.sum(used).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused), Tensor::zeros(1, 2));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[&[1.0, 2.0]]));
        assert_eq!(tape.backward(w).unwrap_err(), Error::NonScalarLoss { shape: (1, 2) });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[&[1.0, 2.0]]));
        let w = tape.leaf(t(&[&[3.0], &[4.0]]));
        let y = tape.matmul(c, w).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(w).data(), &[1.0, 2.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[&[f64::MAX, f64::MAX]]));
        assert_eq!(tape.sum(w).unwrap_err(), Error::NonFinite { op: "sum" });
    }

    #[test]
    fn relu_of_negated_nonnegatives_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[&[0.0, 1.5, 3.0, 1e9]]));
        let neg = tape.scale(x, -1.0).unwrap();
        let y = tape.relu(neg).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let mut tape = Tape::new();
        let logits = tape.leaf(t(&[&[0.2, -1.0, 2.5]]));
        let loss = tape.softmax_cross_entropy(logits, &[1], &[]).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut p = [0.2, -1.0, 2.5];
        softmax_in_place(&mut p);
        let g = grads.wrt(logits);
        for (c, &pc) in p.iter().enumerate() {
            let expected = pc - if c == 1 { 1.0 } else { 0.0 };
            assert!((g.get(0, c) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(1, 5));
        let loss = tape.softmax_cross_entropy(logits, &[3], &[]).unwrap();
        assert!((tape.value(loss).get(0, 0) - 5f64.ln()).abs() < 1e-12);
    }
}
