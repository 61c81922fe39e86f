use std::sync::Arc;

use super::ops::{clamped_row_norms, gelu, gelu_grad, layer_norm_stats, sigmoid};
use super::{dot, matmul_into, Tensor};
use crate::error::TensorError;
use crate::graph::Csr;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulScalar { s: Var, a: Var },
    OneMinus(Var),
    Sigmoid(Var),
    RowScale { a: Var, scales: Arc<[f64]> },
    MulConst { a: Var, mask: Tensor },
    RowL2Normalize { a: Var, norms: Vec<f64>, clamped: Vec<bool> },
    LayerNorm { a: Var, gain: Var, bias: Var, xhat: Tensor, inv_std: Vec<f64> },
    Gelu(Var),
    Relu(Var),
    SegmentSum { a: Var, segments: Arc<[usize]> },
    GatherRows { a: Var, idx: Arc<[usize]> },
    NeighborSum { a: Var, adj: Arc<Csr> },
    ConcatRows(Vec<Var>),
    Transpose(Var),
    RowDot(Var, Var),
    Sum(Var),
    Mean(Var),
    MaskedCrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Records tensor operations in execution order and replays them backwards.
///
/// Values are never mutated once recorded. Gradients accumulate on the leaves
/// created with [`Tape::param`]; call [`Tape::zero_grads`] to reset them.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// A constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (l, r) = (self.shape(a), self.shape(b));
        if l != r {
            return Err(TensorError::Shape { op, left: l, right: r });
        }
        Ok(())
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        Tensor::from_vec(x.rows(), x.cols(), data).expect("shape preserved")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= v;
        }
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(TensorError::Shape {
                op: "add_row_broadcast",
                left: sa,
                right: sr,
            });
        }
        let mut out = self.value(a).clone();
        let b = self.value(row).data().to_vec();
        for r in 0..sa.0 {
            for (o, v) in out.row_mut(r).iter_mut().zip(&b) {
                *o += v;
            }
        }
        self.push("add_row_broadcast", out, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        let out = self.value(a).scaled(s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let out = self.map(a, |v| v + c);
        self.push("add_const", out, Op::AddConst(a), &[a])
    }

    /// Multiplies every element of `a` by the 1x1 tensor `s`.
    pub fn mul_scalar(&mut self, s: Var, a: Var) -> Result<Var, TensorError> {
        if self.shape(s) != (1, 1) {
            return Err(TensorError::Shape {
                op: "mul_scalar",
                left: self.shape(s),
                right: (1, 1),
            });
        }
        let k = self.value(s).item();
        let out = self.value(a).scaled(k);
        self.push("mul_scalar", out, Op::MulScalar { s, a }, &[s, a])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.map(a, |v| 1.0 - v);
        self.push("one_minus", out, Op::OneMinus(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.map(a, sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    /// Multiplies row `r` of `a` by the constant `scales[r]`.
    pub fn row_scale(&mut self, a: Var, scales: Arc<[f64]>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if scales.len() != x.rows() {
            return Err(TensorError::Shape {
                op: "row_scale",
                left: x.shape(),
                right: (scales.len(), 1),
            });
        }
        let mut out = x.clone();
        for (r, &s) in scales.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        self.push("row_scale", out, Op::RowScale { a, scales }, &[a])
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.shape() != mask.shape() {
            return Err(TensorError::Shape {
                op: "mul_const",
                left: x.shape(),
                right: mask.shape(),
            });
        }
        let mut out = x.clone();
        for (o, m) in out.data_mut().iter_mut().zip(mask.data()) {
            *o *= m;
        }
        self.push("mul_const", out, Op::MulConst { a, mask }, &[a])
    }

    /// Divides each row by `max(||row||, eps)`; zero rows stay zero.
    pub fn row_l2_normalize(&mut self, a: Var, eps: f64) -> Result<Var, TensorError> {
        if eps <= 0.0 {
            return Err(TensorError::Invalid("row_l2_normalize: eps must be positive".into()));
        }
        let x = self.value(a);
        let norms = clamped_row_norms(x, eps);
        let clamped = (0..x.rows()).map(|r| x.row_norm(r) < eps).collect();
        let mut out = x.clone();
        for (r, &n) in norms.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        self.push("row_l2_normalize", out, Op::RowL2Normalize { a, norms, clamped }, &[a])
    }

    /// Per-row standardization (biased variance, `eps` inside the root), then
    /// `gain * xhat + bias` with `1 x d` gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let (m, d) = self.shape(a);
        for p in [gain, bias] {
            if self.shape(p) != (1, d) {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    left: (m, d),
                    right: self.shape(p),
                });
            }
        }
        if d < 2 {
            return Err(TensorError::Invalid("layer_norm needs at least 2 columns".into()));
        }
        let (xhat, inv_std) = layer_norm_stats(self.value(a), eps);
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = xhat.clone();
        for r in 0..m {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(&g).zip(&b) {
                *o = *o * gv + bv;
            }
        }
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm { a, gain, bias, xhat, inv_std },
            &[a, gain, bias],
        )
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.map(a, gelu);
        self.push("gelu", out, Op::Gelu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.map(a, |v| v.max(0.0));
        self.push("relu", out, Op::Relu(a), &[a])
    }

    /// Output row `k` is the sum of the input rows whose segment is `k`.
    pub fn segment_sum(&mut self, a: Var, segments: Arc<[usize]>, n_out: usize) -> Result<Var, TensorError> {
        let x = self.value(a);
        if segments.len() != x.rows() {
            return Err(TensorError::Shape {
                op: "segment_sum",
                left: x.shape(),
                right: (segments.len(), 1),
            });
        }
        let mut out = Tensor::zeros(n_out, x.cols());
        for (r, &s) in segments.iter().enumerate() {
            if s >= n_out {
                return Err(TensorError::Index {
                    op: "segment_sum",
                    index: s,
                    bound: n_out,
                });
            }
            for (o, v) in out.row_mut(s).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        self.push("segment_sum", out, Op::SegmentSum { a, segments }, &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var, TensorError> {
        let out = self.value(a).select_rows(&idx)?;
        self.push("gather_rows", out, Op::GatherRows { a, idx }, &[a])
    }

    /// Output row `v` is the sum of input rows `u` for `u` in the adjacency list of `v`.
    pub fn neighbor_sum(&mut self, a: Var, adj: Arc<Csr>) -> Result<Var, TensorError> {
        let x = self.value(a);
        if adj.node_count() != x.rows() {
            return Err(TensorError::Shape {
                op: "neighbor_sum",
                left: x.shape(),
                right: (adj.node_count(), x.cols()),
            });
        }
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for v in 0..x.rows() {
            let row = out.row_mut(v);
            for &u in adj.neighbors(v) {
                for (o, val) in row.iter_mut().zip(x.row(u)) {
                    *o += val;
                }
            }
        }
        self.push("neighbor_sum", out, Op::NeighborSum { a, adj }, &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let cols = parts.first().map_or(0, |&p| self.shape(p).1);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let x = self.value(p);
            if x.cols() != cols {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    left: (rows, cols),
                    right: x.shape(),
                });
            }
            rows += x.rows();
            data.extend_from_slice(x.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    /// Row-wise inner products, `[m, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("row_dot", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = (0..x.rows()).map(|r| dot(x.row(r), y.row(r))).collect();
        let out = Tensor::from_vec(x.rows(), 1, data)?;
        self.push("row_dot", out, Op::RowDot(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.data().is_empty() {
            return Err(TensorError::Invalid("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(x.sum() / x.data().len() as f64);
        self.push("mean", out, Op::Mean(a), &[a])
    }

    /// Mean over rows of `logsumexp(row without excluded[r]) - row[targets[r]]`.
    ///
    /// Uses the max-shift identity for the log-sum-exp.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        excluded: &[Option<usize>],
    ) -> Result<Var, TensorError> {
        let x = self.value(logits);
        let (m, n) = x.shape();
        if targets.len() != m || excluded.len() != m {
            return Err(TensorError::Shape {
                op: "masked_cross_entropy",
                left: (m, n),
                right: (targets.len(), excluded.len()),
            });
        }
        if m == 0 {
            return Err(TensorError::Invalid("masked_cross_entropy on zero rows".into()));
        }
        let mut probs = Tensor::zeros(m, n);
        let mut total = 0.0;
        for r in 0..m {
            let t = targets[r];
            if t >= n || excluded[r] == Some(t) {
                return Err(TensorError::Index {
                    op: "masked_cross_entropy",
                    index: t,
                    bound: n,
                });
            }
            let row = x.row(r);
            let allowed = |k: usize| excluded[r] != Some(k);
            let max = (0..n).filter(|&k| allowed(k)).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for k in (0..n).filter(|&k| allowed(k)) {
                z += (row[k] - max).exp();
            }
            let lse = max + z.ln();
            total += lse - row[t];
            let p = probs.row_mut(r);
            for k in (0..n).filter(|&k| allowed(k)) {
                p[k] = (row[k] - max).exp() / z;
            }
        }
        let out = Tensor::scalar(total / m as f64);
        self.push(
            "masked_cross_entropy",
            out,
            Op::MaskedCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Propagates `d loss / d x` to every tracked leaf, adding to any
    /// gradient already stored there.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NotScalar(shape));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let tracked = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, contrib: Tensor| {
            if !tracked(v) {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if tracked(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    let bt = bv.transpose();
                    matmul_into(g.data(), bt.data(), ga.data_mut(), g.rows(), g.cols(), bt.cols());
                    send(*a, ga);
                }
                if tracked(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    let at = av.transpose();
                    matmul_into(at.data(), g.data(), gb.data_mut(), at.rows(), at.cols(), g.cols());
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.scaled(-1.0));
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                send(*row, gr);
            }
            Op::Scale(a, s) => send(*a, g.scaled(*s)),
            Op::AddConst(a) => send(*a, g.clone()),
            Op::MulScalar { s, a } => {
                let k = self.value(*s).item();
                send(*s, Tensor::scalar(dot(g.data(), self.value(*a).data())));
                send(*a, g.scaled(k));
            }
            Op::OneMinus(a) => send(*a, g.scaled(-1.0)),
            Op::Sigmoid(a) => {
                let y = &node.value;
                let data = g.data().iter().zip(y.data()).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                send(*a, Tensor::from_vec(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::RowScale { a, scales } => {
                let mut ga = g.clone();
                for (r, &s) in scales.iter().enumerate() {
                    ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                }
                send(*a, ga);
            }
            Op::MulConst { a, mask } => {
                let mut ga = g.clone();
                for (o, m) in ga.data_mut().iter_mut().zip(mask.data()) {
                    *o *= m;
                }
                send(*a, ga);
            }
            Op::RowL2Normalize { a, norms, clamped } => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for (r, &n) in norms.iter().enumerate() {
                    let gr = g.row(r);
                    let out = ga.row_mut(r);
                    if clamped[r] {
                        // inside the eps clamp the map is linear
                        for (o, gv) in out.iter_mut().zip(gr) {
                            *o = gv / n;
                        }
                    } else {
                        let yr = y.row(r);
                        let proj = dot(yr, gr);
                        for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                            *o = (gv - yv * proj) / n;
                        }
                    }
                }
                send(*a, ga);
            }
            Op::LayerNorm { a, gain, bias, xhat, inv_std } => {
                let (m, d) = xhat.shape();
                let gvals = self.value(*gain).data();
                if tracked(*gain) {
                    let mut gg = Tensor::zeros(1, d);
                    for r in 0..m {
                        for ((o, gv), xv) in gg.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += gv * xv;
                        }
                    }
                    send(*gain, gg);
                }
                if tracked(*bias) {
                    let mut gb = Tensor::zeros(1, d);
                    for r in 0..m {
                        for (o, gv) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    send(*bias, gb);
                }
                if tracked(*a) {
                    let df = d as f64;
                    let mut ga = Tensor::zeros(m, d);
                    for r in 0..m {
                        let dxhat: Vec<f64> = g.row(r).iter().zip(gvals).map(|(gv, w)| gv * w).collect();
                        let s1: f64 = dxhat.iter().sum();
                        let s2 = dot(&dxhat, xhat.row(r));
                        let inv = inv_std[r];
                        for ((o, dx), xv) in ga.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r)) {
                            *o = inv / df * (df * dx - s1 - xv * s2);
                        }
                    }
                    send(*a, ga);
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(gv, xv)| gv * gelu_grad(*xv)).collect();
                send(*a, Tensor::from_vec(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                send(*a, Tensor::from_vec(g.rows(), g.cols(), data).expect("shape"));
            }
            Op::SegmentSum { a, segments } => {
                let mut ga = Tensor::zeros(segments.len(), g.cols());
                for (r, &s) in segments.iter().enumerate() {
                    ga.row_mut(r).copy_from_slice(g.row(s));
                }
                send(*a, ga);
            }
            Op::GatherRows { a, idx } => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                for (k, &r) in idx.iter().enumerate() {
                    for (o, gv) in ga.row_mut(r).iter_mut().zip(g.row(k)) {
                        *o += gv;
                    }
                }
                send(*a, ga);
            }
            Op::NeighborSum { a, adj: csr } => {
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                for v in 0..g.rows() {
                    for &u in csr.neighbors(v) {
                        for (o, gv) in ga.row_mut(u).iter_mut().zip(g.row(v)) {
                            *o += gv;
                        }
                    }
                }
                send(*a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    let cols = g.cols();
                    let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    send(p, Tensor::from_vec(rows, cols, slice).expect("shape"));
                    offset += rows;
                }
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::RowDot(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(x.rows(), x.cols());
                let mut gb = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let s = g.get(r, 0);
                    for (o, v) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o = s * v;
                    }
                    for (o, v) in gb.row_mut(r).iter_mut().zip(x.row(r)) {
                        *o = s * v;
                    }
                }
                send(*a, ga);
                send(*b, gb);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                send(*a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                send(*a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::MaskedCrossEntropy { logits, targets, probs } => {
                let m = probs.rows() as f64;
                let scale = g.item() / m;
                let mut gl = probs.scaled(scale);
                for (r, &t) in targets.iter().enumerate() {
                    let v = gl.get(r, t);
                    gl.set(r, t, v - scale);
                }
                send(*logits, gl);
            }
        }
    }
}
