//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive operation of a forward pass as a node
//! holding its value, its parents and whatever operands the gradient rule
//! needs. Nodes are appended in evaluation order, so the node list is already
//! topologically sorted and [`Tape::backward`] walks it once in reverse.
//!
//! The built-in ops cover the attention aggregation and the BPR objective.
//! Larger fused computations, such as a whole ODE solve, plug in through
//! [`Function`].

use std::sync::Arc;

use super::dense::{log_sigmoid, sigmoid, DenseMatrix};
use super::sparse::SparseAdjacency;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Directed message list used by the edge primitives.
///
/// Message `m` carries `coef[m]` times the source row `src[m]` into the
/// destination row `dst[m]`. `slot[m]` indexes a per-edge feature (one slot
/// can be shared by the two directions of an undirected edge). Rows flagged in
/// `passthrough` receive no messages and copy their input instead.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMessages {
    pub n: usize,
    pub slots: usize,
    pub dst: Vec<usize>,
    pub src: Vec<usize>,
    pub coef: Vec<f64>,
    pub slot: Vec<usize>,
    pub passthrough: Vec<bool>,
}

impl EdgeMessages {
    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }
}

/// A differentiable computation whose forward value is produced by the
/// caller and whose vector-Jacobian product the tape calls during
/// [`Tape::backward`].
pub trait Function: std::fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient contribution to each input given the output gradient `grad`.
    /// Entries for inputs with `wants[i] == false` may be `None`.
    fn backward(
        &self,
        inputs: &[&DenseMatrix],
        output: &DenseMatrix,
        grad: &DenseMatrix,
        wants: &[bool],
    ) -> Result<Vec<Option<DenseMatrix>>>;
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    LinComb(Vec<(Var, f64)>),
    Hadamard(Var, Var),
    Spmm(Arc<SparseAdjacency>, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Sum(Var),
    RowSlice { src: Var, start: usize },
    Gather(Var, Arc<Vec<usize>>),
    RowDot(Var, Var),
    RowScale(Var, Arc<Vec<f64>>),
    TimeEncode { freq: Var, times: Arc<Vec<f64>> },
    EdgeLogits { dst_score: Var, src_score: Var, slot_score: Var, msgs: Arc<EdgeMessages> },
    EdgeScatter { x: Var, weights: Var, msgs: Arc<EdgeMessages> },
    Custom(Arc<dyn Function>, Vec<Var>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::LinComb(..) => "lincomb",
            Op::Hadamard(..) => "hadamard",
            Op::Spmm(..) => "spmm",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sigmoid(..) => "sigmoid",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Sum(..) => "sum",
            Op::RowSlice { .. } => "row_slice",
            Op::Gather(..) => "gather",
            Op::RowDot(..) => "row_dot",
            Op::RowScale(..) => "row_scale",
            Op::TimeEncode { .. } => "time_encode",
            Op::EdgeLogits { .. } => "edge_logits",
            Op::EdgeScatter { .. } => "edge_scatter",
            Op::Custom(f, _) => f.name(),
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Hadamard(a, b) | Op::MatMul(a, b) | Op::RowDot(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Spmm(_, a)
            | Op::Transpose(a)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Sum(a)
            | Op::Gather(a, _)
            | Op::RowScale(a, _) => vec![*a],
            Op::RowSlice { src, .. } => vec![*src],
            Op::LinComb(terms) => terms.iter().map(|(v, _)| *v).collect(),
            Op::TimeEncode { freq, .. } => vec![*freq],
            Op::EdgeLogits {
                dst_score,
                src_score,
                slot_score,
                ..
            } => vec![*dst_score, *src_score, *slot_score],
            Op::EdgeScatter { x, weights, .. } => vec![*x, *weights],
            Op::Custom(_, inputs) => inputs.clone(),
        }
    }
}

struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&DenseMatrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: (usize, usize)) -> DenseMatrix {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: DenseMatrix, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        self.push(value, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    /// `Σ cᵢ·xᵢ` over equally shaped operands.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Invalid("lin_comb needs at least one term".into()))?;
        let mut value = self.value(first.0).scale(first.1);
        for &(v, c) in rest {
            value.axpy(c, self.value(v))?;
        }
        self.push(value, Op::LinComb(terms.to_vec()))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        self.push(value, Op::Hadamard(a, b))
    }

    pub fn spmm(&mut self, adj: &Arc<SparseAdjacency>, x: Var) -> Result<Var> {
        let value = adj.spmm(self.value(x))?;
        self.push(value, Op::Spmm(Arc::clone(adj), x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(log_sigmoid);
        self.push(value, Op::LogSigmoid(a))
    }

    /// Sum of all entries, as a 1x1 matrix.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = DenseMatrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Rows `start..start+len` of `src`.
    pub fn row_slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(src);
        if start + len > m.rows() {
            return Err(Error::shape(
                "row_slice",
                format!("rows {start}..{} of a {}-row matrix", start + len, m.rows()),
            ));
        }
        let cols = m.cols();
        let data = m.as_slice()[start * cols..(start + len) * cols].to_vec();
        let value = DenseMatrix::from_vec(len, cols, data)?;
        self.push(value, Op::RowSlice { src, start })
    }

    /// Row `r` of the output is row `index[r]` of `x`.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let m = self.value(x);
        let mut value = DenseMatrix::zeros(index.len(), m.cols());
        for (r, &i) in index.iter().enumerate() {
            if i >= m.rows() {
                return Err(Error::shape("gather", format!("row {i} of {}", m.rows())));
            }
            value.row_mut(r).copy_from_slice(m.row(i));
        }
        self.push(value, Op::Gather(x, index))
    }

    /// Per-row inner products, as a column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        x.ensure_same_shape(y, "row_dot")?;
        let value = DenseMatrix::column(
            (0..x.rows())
                .map(|r| x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum())
                .collect(),
        );
        self.push(value, Op::RowDot(a, b))
    }

    /// Multiplies row `r` of `x` by the constant `scale[r]`.
    pub fn row_scale(&mut self, x: Var, scale: Arc<Vec<f64>>) -> Result<Var> {
        let m = self.value(x);
        if scale.len() != m.rows() {
            return Err(Error::shape(
                "row_scale",
                format!("{} factors for {} rows", scale.len(), m.rows()),
            ));
        }
        let mut value = m.clone();
        for (r, &s) in scale.iter().enumerate() {
            value.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        self.push(value, Op::RowScale(x, scale))
    }

    /// Interleaved `√(1/m)·[cos ω₁t, sin ω₁t, …]` for each time `t`, where
    /// `freq` is an `m x 1` column. Output is `times.len() x 2m`.
    pub fn time_encode(&mut self, freq: Var, times: Arc<Vec<f64>>) -> Result<Var> {
        let w = self.value(freq);
        if w.cols() != 1 || w.rows() == 0 {
            return Err(Error::shape("time_encode", format!("frequencies {:?}", w.shape())));
        }
        let m = w.rows();
        let c = (1.0 / m as f64).sqrt();
        let mut value = DenseMatrix::zeros(times.len(), 2 * m);
        for (e, &t) in times.iter().enumerate() {
            let row = value.row_mut(e);
            for (j, &wj) in w.as_slice().iter().enumerate() {
                let (s, co) = (wj * t).sin_cos();
                row[2 * j] = c * co;
                row[2 * j + 1] = c * s;
            }
        }
        self.push(value, Op::TimeEncode { freq, times })
    }

    /// Per-message logit `dst_score[dst] + src_score[src] + slot_score[slot]`.
    pub fn edge_logits(
        &mut self,
        dst_score: Var,
        src_score: Var,
        slot_score: Var,
        msgs: &Arc<EdgeMessages>,
    ) -> Result<Var> {
        let (a, b, s) = (self.value(dst_score), self.value(src_score), self.value(slot_score));
        if a.shape() != (msgs.n, 1) || b.shape() != (msgs.n, 1) || s.shape() != (msgs.slots, 1) {
            return Err(Error::shape(
                "edge_logits",
                format!(
                    "scores {:?}, {:?}, {:?} for {} nodes / {} slots",
                    a.shape(),
                    b.shape(),
                    s.shape(),
                    msgs.n,
                    msgs.slots
                ),
            ));
        }
        let value = DenseMatrix::column(
            (0..msgs.len())
                .map(|m| {
                    a.as_slice()[msgs.dst[m]] + b.as_slice()[msgs.src[m]] + s.as_slice()[msgs.slot[m]]
                })
                .collect(),
        );
        self.push(
            value,
            Op::EdgeLogits {
                dst_score,
                src_score,
                slot_score,
                msgs: Arc::clone(msgs),
            },
        )
    }

    /// `out[i] = Σ_{m: dst=i} coef[m]·w[m]·x[src[m]]`, or `x[i]` for
    /// passthrough rows.
    pub fn edge_scatter(&mut self, x: Var, weights: Var, msgs: &Arc<EdgeMessages>) -> Result<Var> {
        let (xm, w) = (self.value(x), self.value(weights));
        if xm.rows() != msgs.n || w.shape() != (msgs.len(), 1) {
            return Err(Error::shape(
                "edge_scatter",
                format!(
                    "x {:?}, weights {:?} for {} nodes / {} messages",
                    xm.shape(),
                    w.shape(),
                    msgs.n,
                    msgs.len()
                ),
            ));
        }
        let mut value = DenseMatrix::zeros(xm.rows(), xm.cols());
        for m in 0..msgs.len() {
            let f = msgs.coef[m] * w.as_slice()[m];
            let src = xm.row(msgs.src[m]);
            for (o, &v) in value.row_mut(msgs.dst[m]).iter_mut().zip(src) {
                *o += f * v;
            }
        }
        for (i, &pass) in msgs.passthrough.iter().enumerate() {
            if pass {
                value.row_mut(i).copy_from_slice(xm.row(i));
            }
        }
        self.push(
            value,
            Op::EdgeScatter {
                x,
                weights,
                msgs: Arc::clone(msgs),
            },
        )
    }

    /// Records `f` applied to `inputs` with the already computed `value`.
    pub fn custom(&mut self, f: Arc<dyn Function>, inputs: &[Var], value: DenseMatrix) -> Result<Var> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(Error::Invalid(format!("{}: unknown input {}", f.name(), bad.0)));
        }
        self.push(value, Op::Custom(f, inputs.to_vec()))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::shape("backward", format!("loss must be 1x1, got {shape:?}")));
        }
        let mut grads: Vec<Option<DenseMatrix>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        let mut acc = |v: Var, contrib: DenseMatrix| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &contrib),
                slot @ None => {
                    *slot = Some(contrib);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone())?;
                }
                if self.wants(*b) {
                    acc(*b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone())?;
                }
                if self.wants(*b) {
                    acc(*b, g.scale(-1.0))?;
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    acc(*a, g.scale(*s))?;
                }
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    if self.wants(v) {
                        acc(v, g.scale(c))?;
                    }
                }
            }
            Op::Hadamard(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.hadamard(self.value(*b))?)?;
                }
                if self.wants(*b) {
                    acc(*b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Spmm(adj, x) => {
                if self.wants(*x) {
                    acc(*x, adj.spmm_transpose(g)?)?;
                }
            }
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.matmul(&self.value(*b).transpose())?)?;
                }
                if self.wants(*b) {
                    acc(*b, self.value(*a).transpose().matmul(g)?)?;
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    acc(*a, g.transpose())?;
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    acc(*a, g.zip_map(&node.value, "sigmoid_grad", |gv, y| gv * y * (1.0 - y))?)?;
                }
            }
            Op::LogSigmoid(a) => {
                if self.wants(*a) {
                    acc(
                        *a,
                        g.zip_map(self.value(*a), "log_sigmoid_grad", |gv, x| gv * sigmoid(-x))?,
                    )?;
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let (r, c) = self.value(*a).shape();
                    acc(*a, DenseMatrix::filled(r, c, g.as_slice()[0]))?;
                }
            }
            Op::RowSlice { src, start } => {
                if self.wants(*src) {
                    let (r, c) = self.value(*src).shape();
                    let mut full = DenseMatrix::zeros(r, c);
                    full.as_mut_slice()[start * c..start * c + g.as_slice().len()]
                        .copy_from_slice(g.as_slice());
                    acc(*src, full)?;
                }
            }
            Op::Gather(x, index) => {
                if self.wants(*x) {
                    let (r, c) = self.value(*x).shape();
                    let mut full = DenseMatrix::zeros(r, c);
                    for (row, &i) in index.iter().enumerate() {
                        for (o, &gv) in full.row_mut(i).iter_mut().zip(g.row(row)) {
                            *o += gv;
                        }
                    }
                    acc(*x, full)?;
                }
            }
            Op::RowDot(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if self.wants(this) {
                        let o = self.value(other);
                        let mut contrib = o.clone();
                        for r in 0..o.rows() {
                            let gr = g.as_slice()[r];
                            contrib.row_mut(r).iter_mut().for_each(|v| *v *= gr);
                        }
                        acc(this, contrib)?;
                    }
                }
            }
            Op::RowScale(x, scale) => {
                if self.wants(*x) {
                    let mut contrib = g.clone();
                    for (r, &s) in scale.iter().enumerate() {
                        contrib.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    acc(*x, contrib)?;
                }
            }
            Op::TimeEncode { freq, times } => {
                if self.wants(*freq) {
                    let m = self.value(*freq).rows();
                    let mut gw = vec![0.0; m];
                    // The stored output already holds c·cos and c·sin.
                    for (e, &t) in times.iter().enumerate() {
                        let (ge, ye) = (g.row(e), node.value.row(e));
                        for j in 0..m {
                            gw[j] += t * (ge[2 * j + 1] * ye[2 * j] - ge[2 * j] * ye[2 * j + 1]);
                        }
                    }
                    acc(*freq, DenseMatrix::column(gw))?;
                }
            }
            Op::EdgeLogits {
                dst_score,
                src_score,
                slot_score,
                msgs,
            } => {
                let gs = g.as_slice();
                if self.wants(*dst_score) {
                    let mut out = vec![0.0; msgs.n];
                    for (m, &d) in msgs.dst.iter().enumerate() {
                        out[d] += gs[m];
                    }
                    acc(*dst_score, DenseMatrix::column(out))?;
                }
                if self.wants(*src_score) {
                    let mut out = vec![0.0; msgs.n];
                    for (m, &s) in msgs.src.iter().enumerate() {
                        out[s] += gs[m];
                    }
                    acc(*src_score, DenseMatrix::column(out))?;
                }
                if self.wants(*slot_score) {
                    let mut out = vec![0.0; msgs.slots];
                    for (m, &s) in msgs.slot.iter().enumerate() {
                        out[s] += gs[m];
                    }
                    acc(*slot_score, DenseMatrix::column(out))?;
                }
            }
            Op::EdgeScatter { x, weights, msgs } => {
                let xm = self.value(*x);
                let w = self.value(*weights).as_slice();
                if self.wants(*x) {
                    let mut gx = DenseMatrix::zeros(xm.rows(), xm.cols());
                    for m in 0..msgs.len() {
                        let f = msgs.coef[m] * w[m];
                        let gd = g.row(msgs.dst[m]);
                        for (o, &gv) in gx.row_mut(msgs.src[m]).iter_mut().zip(gd) {
                            *o += f * gv;
                        }
                    }
                    for (i, &pass) in msgs.passthrough.iter().enumerate() {
                        if pass {
                            for (o, &gv) in gx.row_mut(i).iter_mut().zip(g.row(i)) {
                                *o += gv;
                            }
                        }
                    }
                    acc(*x, gx)?;
                }
                if self.wants(*weights) {
                    let gw = (0..msgs.len())
                        .map(|m| {
                            let dot: f64 = g
                                .row(msgs.dst[m])
                                .iter()
                                .zip(xm.row(msgs.src[m]))
                                .map(|(a, b)| a * b)
                                .sum();
                            msgs.coef[m] * dot
                        })
                        .collect();
                    acc(*weights, DenseMatrix::column(gw))?;
                }
            }
            Op::Custom(f, inputs) => {
                let values: Vec<&DenseMatrix> = inputs.iter().map(|&v| self.value(v)).collect();
                let wants: Vec<bool> = inputs.iter().map(|&v| self.wants(v)).collect();
                let contribs = f.backward(&values, &node.value, g, &wants)?;
                if contribs.len() != inputs.len() {
                    return Err(Error::shape(
                        "custom_backward",
                        format!("{}: {} gradients for {} inputs", f.name(), contribs.len(), inputs.len()),
                    ));
                }
                for ((&v, want), contrib) in inputs.iter().zip(wants).zip(contribs) {
                    if let (true, Some(c)) = (want, contrib) {
                        if c.shape() != self.value(v).shape() {
                            return Err(Error::shape(
                                "custom_backward",
                                format!("{}: gradient {:?} for input {:?}", f.name(), c.shape(), self.value(v).shape()),
                            ));
                        }
                        acc(v, c)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Checks the tape gradient of `build` against central differences on
    /// every entry of every input.
    fn check_grad(inputs: Vec<DenseMatrix>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
        let h = 1e-5;
        let eval = |vals: &[DenseMatrix]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
            let out = build(&mut tape, &vars).unwrap();
            tape.value(out).item().unwrap()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        let grads = tape.backward(out).unwrap();
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], input.shape());
            for idx in 0..input.as_slice().len() {
                let mut plus = inputs.clone();
                plus[k].as_mut_slice()[idx] += h;
                let mut minus = inputs.clone();
                minus[k].as_mut_slice()[idx] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.as_slice()[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel <= 1e-5, "input {k} entry {idx}: tape {a} vs fd {numeric}");
            }
        }
    }

    #[test]
    fn sum_of_matvec_gradient_is_broadcast() {
        let mut tape = Tape::new();
        let w = tape.leaf(DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap());
        let x = tape.constant(DenseMatrix::column(vec![0.5, -1.0, 2.0]));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(w).unwrap();
        assert_eq!(g.row(0), &[0.5, -1.0, 2.0]);
        assert_eq!(g.row(1), &[0.5, -1.0, 2.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(DenseMatrix::zeros(2, 2));
        assert!(matches!(tape.backward(w), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_values_are_trapped() {
        let mut tape = Tape::new();
        let w = tape.leaf(DenseMatrix::scalar(f64::MAX));
        assert!(matches!(tape.scale(w, 10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn hadamard_gradient_3x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random(&mut rng, 3, 2), random(&mut rng, 3, 2));
        check_grad(vec![a, b], |t, v| {
            let h = t.hadamard(v[0], v[1])?;
            let h2 = t.hadamard(h, v[0])?;
            t.sum(h2)
        });
    }

    #[test]
    fn matmul_transpose_sigmoid_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random(&mut rng, 3, 4), random(&mut rng, 2, 4));
        check_grad(vec![a, b], |t, v| {
            let bt = t.transpose(v[1])?;
            let p = t.matmul(v[0], bt)?;
            let s = t.sigmoid(p)?;
            let l = t.log_sigmoid(s)?;
            t.sum(l)
        });
    }

    #[test]
    fn spmm_lincomb_rowslice_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let adj = Arc::new(
            SparseAdjacency::from_triplets(4, &[(0, 2, 0.5), (2, 0, 0.5), (1, 3, 0.7), (3, 1, 0.7), (0, 3, 0.2)])
                .unwrap(),
        );
        let x = random(&mut rng, 4, 3);
        check_grad(vec![x], move |t, v| {
            let y = t.spmm(&adj, v[0])?;
            let z = t.lin_comb(&[(y, 0.3), (v[0], -1.2)])?;
            let w = t.hadamard(z, z)?;
            let s = t.row_slice(w, 1, 2)?;
            let d = t.sub(s, s)?;
            let e = t.add(s, d)?;
            let f = t.scale(e, 2.0)?;
            t.sum(f)
        });
    }

    #[test]
    fn gather_rowdot_rowscale_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 5, 3);
        check_grad(vec![x], |t, v| {
            let scaled = t.row_scale(v[0], Arc::new(vec![1.0, 0.5, -2.0, 0.0, 3.0]))?;
            let a = t.gather(scaled, Arc::new(vec![0, 2, 2, 4]))?;
            let b = t.gather(v[0], Arc::new(vec![1, 1, 3, 0]))?;
            let d = t.row_dot(a, b)?;
            let l = t.log_sigmoid(d)?;
            t.sum(l)
        });
    }

    #[test]
    fn time_encode_gradient() {
        let freq = DenseMatrix::column(vec![0.3, 1.7, -0.4]);
        let proj = DenseMatrix::column(vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]);
        check_grad(vec![freq, proj], |t, v| {
            let enc = t.time_encode(v[0], Arc::new(vec![0.0, 0.25, 1.3, 2.9]))?;
            let p = t.matmul(enc, v[1])?;
            let s = t.sigmoid(p)?;
            t.sum(s)
        });
    }

    #[test]
    fn edge_ops_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let msgs = Arc::new(EdgeMessages {
            n: 4,
            slots: 2,
            dst: vec![0, 2, 0, 2],
            src: vec![2, 0, 3, 0],
            coef: vec![0.5, 0.5, 0.7, 0.7],
            slot: vec![0, 0, 1, 1],
            passthrough: vec![false, true, false, false],
        });
        let x = random(&mut rng, 4, 3);
        let a = random(&mut rng, 4, 1);
        let b = random(&mut rng, 4, 1);
        let s = random(&mut rng, 2, 1);
        check_grad(vec![x, a, b, s], move |t, v| {
            let logits = t.edge_logits(v[1], v[2], v[3], &msgs)?;
            let w = t.sigmoid(logits)?;
            let out = t.edge_scatter(v[0], w, &msgs)?;
            let sq = t.hadamard(out, out)?;
            t.sum(sq)
        });
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut tape = Tape::new();
            let a = tape.leaf(random(&mut rng, 6, 4));
            let b = tape.leaf(random(&mut rng, 4, 6));
            let p = tape.matmul(a, b).unwrap();
            let s = tape.sigmoid(p).unwrap();
            let l = tape.sum(s).unwrap();
            let g = tape.backward(l).unwrap();
            (g.get(a).unwrap().clone(), g.get(b).unwrap().clone())
        };
        let (a1, b1) = run();
        let (a2, b2) = run();
        assert_eq!(a1.as_slice(), a2.as_slice());
        assert_eq!(b1.as_slice(), b2.as_slice());
    }
}
