//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is rebuilt for every forward pass. Parameters of a
//! [`ParamStore`] are borrowed, not copied: the first `store.len()` variables
//! of a graph are the store's tensors in order, so [`Graph::param`] is free.
//! Every other node is appended by an operation and refers only to earlier
//! nodes, which keeps the tape acyclic by construction.

use super::tensor::{self, axis_split, gelu_grad_scalar, gelu_scalar};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    Rows {
        x: Var,
        start: usize,
    },
    MeanRows(Var),
    Sum(Var),
    SumAbs(Var),
    SumSq(Var),
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-owner computation tape.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    n_params: usize,
    nodes: Vec<Node>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            params: None,
            n_params: 0,
            nodes: Vec::new(),
        }
    }

    /// A graph whose first variables are the tensors of `store`.
    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            params: Some(store),
            n_params: store.len(),
            nodes: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> Var {
        assert!(id.0 < self.n_params, "parameter not bound to this graph");
        Var(id.0)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        if v.0 < self.n_params {
            self.params.expect("bound params").get(ParamId(v.0))
        } else {
            &self.nodes[v.0 - self.n_params].value
        }
    }

    fn requires_grad(&self, v: Var) -> bool {
        v.0 < self.n_params || self.nodes[v.0 - self.n_params].requires_grad
    }

    /// Number of nodes recorded on the tape, excluding bound parameters.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scalar values held by recorded (non-parameter) nodes.
    pub fn activation_values(&self) -> usize {
        self.nodes.iter().map(|n| n.value.len()).sum()
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|&p| self.requires_grad(p));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.n_params + self.nodes.len() - 1))
    }

    /// Input that gradients do not flow into.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.n_params + self.nodes.len() - 1)
    }

    /// Input leaf that receives a gradient.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.n_params + self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transposed()?;
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(self.shape_err("add", a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    /// `a[m×n] + row` where `row` holds `n` values, broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        let n = ta.cols();
        if ta.rank() != 2 || tr.len() != n {
            return Err(self.shape_err("add_row", a, row));
        }
        let r = tr.data();
        let data = ta
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(x, y)| x + y))
            .collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(self.shape_err("mul", a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push("scale", out, Op::Scale(a, c), &[a])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = tensor::softmax(self.value(x), axis)?;
        self.push("softmax", out, Op::Softmax { x, axis }, &[x])
    }

    /// Layer normalization over the trailing dimension of a rank-2 tensor.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.cols();
        if tx.rank() != 2 || self.value(gamma).len() != n {
            return Err(self.shape_err("layer_norm", x, gamma));
        }
        if self.value(beta).len() != n {
            return Err(self.shape_err("layer_norm", x, beta));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (c, &v) in row.iter().enumerate() {
                xhat[r * n + c] = (v - mean) * is;
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * g[i % n] + b[i % n])
            .collect();
        let out = Tensor::new(tx.shape(), data)?;
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(gelu_scalar);
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    /// Concatenates rank-2 tensors with equal row counts side by side.
    pub fn hcat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("hcat of nothing"))?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rank() != 2 || self.value(p).rows() != rows {
                return Err(self.shape_err("hcat", first, p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        self.push("hcat", out, Op::HCat(parts.to_vec()), parts)
    }

    /// Stacks rank-2 tensors with equal column counts vertically.
    pub fn vcat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("vcat of nothing"))?;
        let cols = self.value(first).cols();
        for &p in parts {
            if self.value(p).rank() != 2 || self.value(p).cols() != cols {
                return Err(self.shape_err("vcat", first, p));
            }
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        let out = Tensor::new(&[rows, cols], data)?;
        self.push("vcat", out, Op::VCat(parts.to_vec()), parts)
    }

    /// Rows `start..start + len` of a rank-2 tensor.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || len == 0 || start + len > tx.rows() {
            return Err(Error::contract(format!(
                "row slice {start}..{} out of range for shape {:?}",
                start + len,
                tx.shape()
            )));
        }
        let c = tx.cols();
        let out = Tensor::new(&[len, c], tx.data()[start * c..(start + len) * c].to_vec())?;
        self.push("rows", out, Op::Rows { x, start }, &[x])
    }

    /// Column means of a rank-2 tensor, as a `1×n` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(tx.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let out = Tensor::new(&[1, c], out)?;
        self.push("mean_rows", out, Op::MeanRows(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn sum_abs(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v.abs()).sum();
        self.push("sum_abs", Tensor::scalar(s), Op::SumAbs(x), &[x])
    }

    pub fn sum_sq(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push("sum_sq", Tensor::scalar(s), Op::SumSq(x), &[x])
    }

    /// Embedding lookup: row `idx[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let c = tt.cols();
        if tt.rank() != 2 || idx.is_empty() || idx.iter().any(|&i| i >= tt.rows()) {
            return Err(Error::contract(format!(
                "gather indices {idx:?} invalid for table {:?}",
                tt.shape()
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(tt.row(i));
        }
        let out = Tensor::new(&[idx.len(), c], data)?;
        self.push(
            "gather_rows",
            out,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        )
    }

    /// Softmax cross-entropy `−log softmax(logits)[label]` of one logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let tl = self.value(logits);
        let k = tl.len();
        if label >= k {
            return Err(Error::contract(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let d = tl.data();
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + d.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let probs: Vec<f64> = d.iter().map(|v| (v - lse).exp()).collect();
        let loss = lse - d[label];
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            &[logits],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let total = self.n_params + self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; total];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (self.n_params..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx - self.n_params];
            if node.requires_grad {
                self.propagate(node, &gout, &mut grads);
            }
            grads[idx] = Some(gout);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor::new(self.value(Var(i)).shape(), data).expect("grad shape"))
            })
            .collect();
        Ok(Gradients {
            grads,
            n_params: self.n_params,
        })
    }

    fn propagate(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.requires_grad(v) {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
                f(slot);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |g| {
                    // dA = dC · Bᵀ
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gout[i * n + j] * tb.data()[p * n + j];
                            }
                            g[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &mut |g| {
                    // dB = Aᵀ · dC
                    for i in 0..m {
                        for p in 0..k {
                            let s = ta.data()[i * k + p];
                            if s == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                g[p * n + j] += s * gout[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (self.value(*a).rows(), self.value(*a).cols());
                acc(*a, &mut |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += gout[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| add_into(g, gout));
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |g| add_into(g, gout));
                let n = self.value(*row).len();
                acc(*row, &mut |g| {
                    for chunk in gout.chunks(n) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * tb[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * ta[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |g| {
                for (gi, go) in g.iter_mut().zip(gout) {
                    *gi += c * go;
                }
            }),
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis).expect("axis");
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| gout[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                g[idx(j)] += y[idx(j)] * (gout[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.value(*x).cols();
                let gm = self.value(*gamma).data();
                acc(*x, &mut |g| {
                    for (r, is) in inv_std.iter().enumerate() {
                        let base = r * n;
                        let dxhat: Vec<f64> = (0..n).map(|c| gout[base + c] * gm[c]).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dx =
                            (0..n).map(|c| dxhat[c] * xhat[base + c]).sum::<f64>() / n as f64;
                        for c in 0..n {
                            g[base + c] += is * (dxhat[c] - mean_d - xhat[base + c] * mean_dx);
                        }
                    }
                });
                acc(*gamma, &mut |g| {
                    for (i, (go, h)) in gout.iter().zip(xhat).enumerate() {
                        g[i % n] += go * h;
                    }
                });
                acc(*beta, &mut |g| {
                    for (i, go) in gout.iter().enumerate() {
                        g[i % n] += go;
                    }
                });
            }
            Op::Gelu(x) => {
                let tx = self.value(*x).data();
                acc(*x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * gelu_grad_scalar(tx[i]);
                    }
                });
            }
            Op::HCat(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    acc(p, &mut |g| {
                        for r in 0..rows {
                            add_into(
                                &mut g[r * c..(r + 1) * c],
                                &gout[r * total + offset..r * total + offset + c],
                            );
                        }
                    });
                    offset += c;
                }
            }
            Op::VCat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |g| add_into(g, &gout[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Rows { x, start } => {
                let c = node.value.cols();
                acc(*x, &mut |g| add_into(&mut g[start * c..start * c + gout.len()], gout));
            }
            Op::MeanRows(x) => {
                let r = self.value(*x).rows();
                acc(*x, &mut |g| {
                    for chunk in g.chunks_mut(gout.len()) {
                        for (gi, go) in chunk.iter_mut().zip(gout) {
                            *gi += go / r as f64;
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|gi| *gi += gout[0])),
            Op::SumAbs(x) => {
                let tx = self.value(*x).data();
                acc(*x, &mut |g| {
                    for (gi, v) in g.iter_mut().zip(tx) {
                        *gi += gout[0] * sign(*v);
                    }
                });
            }
            Op::SumSq(x) => {
                let tx = self.value(*x).data();
                acc(*x, &mut |g| {
                    for (gi, v) in g.iter_mut().zip(tx) {
                        *gi += gout[0] * 2.0 * v;
                    }
                });
            }
            Op::Gather { table, idx } => {
                let c = node.value.cols();
                acc(*table, &mut |g| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut g[i * c..(i + 1) * c], &gout[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                label,
                probs,
            } => acc(*logits, &mut |g| {
                for (i, p) in probs.iter().enumerate() {
                    let target = if i == *label { 1.0 } else { 0.0 };
                    g[i] += gout[0] * (p - target);
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient buffers produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    n_params: usize,
}

impl Gradients {
    /// Gradient of a node; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        debug_assert!(id.0 < self.n_params);
        self.get(Var(id.0))
    }

    /// Flattened parameter gradient in store order, zeros where absent.
    pub fn flat_params(&self, store: &ParamStore) -> Vec<f64> {
        let mut out = Vec::with_capacity(store.num_values());
        for (i, e) in store.entries().iter().enumerate() {
            match &self.grads[i] {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, e.tensor.len())),
            }
        }
        out
    }
}
