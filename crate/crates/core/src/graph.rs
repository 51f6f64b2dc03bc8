//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it executes, in topological
//! order by construction. [`Graph::backward`] walks the record once in
//! reverse and accumulates gradients additively, so a value consumed by
//! several operations receives the sum of all branch contributions.
//!
//! Besides elementwise and matrix primitives the graph carries a few fused
//! operations (LSTM sequence, causal local attention, overlap-add and
//! framewise cross-entropy) with hand-written backward passes; a per-step
//! graph of scalar LSTM gates would be far too slow for full-length BPTT.

use crate::error::{dim_err, Error, Result};
use crate::tensor::{dot, matmul_at_into, matmul_bt_into, matmul_into, sigmoid, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

struct LstmCache {
    x: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
    hidden: usize,
    /// post-activation gates per frame, layout [i f g o] × H
    gates: Vec<f64>,
    cells: Vec<f64>,
}

struct AttentionCache {
    keys: Var,
    queries: Var,
    values: Var,
    weight: Var,
    prefix: Option<Var>,
    window: usize,
    /// W·q_t for every frame, [T × (D_prefix + D_key)]
    projected: Vec<f64>,
    weights: AttentionWeights,
}

/// Causal local attention weights stored as a band: row `t` holds the
/// weights of keys `max(0, t-window) ..= t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    frames: usize,
    /// Effective window, `min(window, frames - 1)`.
    window: usize,
    band: Vec<f64>,
}

impl AttentionWeights {
    fn new(frames: usize, window: usize) -> Self {
        let window = window.min(frames.saturating_sub(1));
        AttentionWeights { frames, window, band: vec![0.0; frames * (window + 1)] }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// First key index and the weights of keys `start ..= t`.
    pub fn row(&self, t: usize) -> (usize, &[f64]) {
        let start = t.saturating_sub(self.window);
        let base = t * (self.window + 1);
        (start, &self.band[base..base + t - start + 1])
    }

    fn row_mut(&mut self, t: usize) -> &mut [f64] {
        let start = t.saturating_sub(self.window);
        let base = t * (self.window + 1);
        &mut self.band[base..base + t - start + 1]
    }

    /// Weight of key `k` for query `t`; zero outside the window.
    pub fn get2(&self, t: usize, k: usize) -> f64 {
        let (start, w) = self.row(t);
        if k < start || k > t {
            0.0
        } else {
            w[k - start]
        }
    }

    /// Dense `[T × T]` matrix, zero outside each window.
    pub fn to_dense(&self) -> Tensor {
        let mut d = Tensor::zeros(&[self.frames, self.frames]);
        for t in 0..self.frames {
            let (start, w) = self.row(t);
            d.data_mut()[t * self.frames + start..=t * self.frames + t].copy_from_slice(w);
        }
        d
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    Sum(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    Lstm(Box<LstmCache>),
    Attention(Box<AttentionCache>),
    OverlapAdd { x: Var, hop: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

/// Numerically stable softmax of a slice.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(dim_err!("softmax of an empty vector"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_unchecked(t, Op::Leaf, true)
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_unchecked(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `x · wᵀ + b` for `x: [T×D_in]`, `w: [D_out×D_in]`, `b: [D_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (t, din) = self.value(x).dims2()?;
        let (dout, win) = self.value(w).dims2()?;
        if din != win {
            return Err(dim_err!("linear: input width {din} vs weight width {win}"));
        }
        let mut out = vec![0.0; t * dout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != dout {
                return Err(dim_err!("linear: bias length {} vs {dout}", bv.len()));
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv.data());
            }
        }
        matmul_bt_into(self.value(x).data(), self.value(w).data(), &mut out, t, din, dout);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", Tensor::matrix(t, dout, out)?, Op::Linear { x, w, b }, &inputs)
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let f: fn(f64) -> f64 = match op {
            Unary::Relu => |x| if x > 0.0 { x } else { 0.0 },
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Square => |x| x * x,
        };
        let out = self.value(a).map(f);
        self.push(&format!("{op:?}").to_lowercase(), out, Op::Unary(op, a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        check_same_shape(x, y, "elementwise")?;
        let f: fn(f64, f64) -> f64 = match op {
            Binary::Add => |p, q| p + q,
            Binary::Sub => |p, q| p - q,
            Binary::Mul => |p, q| p * q,
        };
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(&format!("{op:?}").to_lowercase(), out, Op::Binary(op, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push("scale", out, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Softmax along the last axis (a vector counts as a single row).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let width = *v.shape().last().unwrap();
        let mut out = v.clone();
        for row in out.data_mut().chunks_mut(width) {
            softmax_in_place(row);
        }
        self.push("softmax", out, Op::SoftmaxRows(a), &[a])
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(dim_err!("concat of nothing"));
        }
        let rows = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(dim_err!("concat: row counts {rows} and {r} differ"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push("concat", Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Unidirectional LSTM over `x: [T×D]` from a zero state.
    ///
    /// `w_ih: [4H×D]`, `w_hh: [4H×H]`, `bias: [4H]`, gate blocks ordered
    /// input, forget, candidate, output. Returns the hidden sequence `[T×H]`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var) -> Result<Var> {
        let (t_len, d) = self.value(x).dims2()?;
        let (g4, wd) = self.value(w_ih).dims2()?;
        if g4 % 4 != 0 || wd != d {
            return Err(dim_err!("lstm: w_ih {:?} incompatible with input width {d}", self.value(w_ih).shape()));
        }
        let h = g4 / 4;
        if self.value(w_hh).shape() != [g4, h] {
            return Err(dim_err!("lstm: w_hh {:?}, expected [{g4}, {h}]", self.value(w_hh).shape()));
        }
        if self.value(bias).len() != g4 {
            return Err(dim_err!("lstm: bias length {} vs {g4}", self.value(bias).len()));
        }
        let mut z = vec![0.0; t_len * g4];
        for row in z.chunks_mut(g4) {
            row.copy_from_slice(self.value(bias).data());
        }
        matmul_bt_into(self.value(x).data(), self.value(w_ih).data(), &mut z, t_len, d, g4);
        let whh = self.value(w_hh).data();
        let mut out = vec![0.0; t_len * h];
        let mut cells = vec![0.0; t_len * h];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..t_len {
            let zt = &mut z[t * g4..(t + 1) * g4];
            if t > 0 {
                for (j, zj) in zt.iter_mut().enumerate() {
                    *zj += dot(&whh[j * h..(j + 1) * h], &h_prev);
                }
            }
            for j in 0..h {
                let i = sigmoid(zt[j]);
                let f = sigmoid(zt[h + j]);
                let g = zt[2 * h + j].tanh();
                let o = sigmoid(zt[3 * h + j]);
                zt[j] = i;
                zt[h + j] = f;
                zt[2 * h + j] = g;
                zt[3 * h + j] = o;
                let c = f * c_prev[j] + i * g;
                cells[t * h + j] = c;
                out[t * h + j] = o * c.tanh();
            }
            h_prev.copy_from_slice(&out[t * h..(t + 1) * h]);
            c_prev.copy_from_slice(&cells[t * h..(t + 1) * h]);
        }
        let cache = LstmCache { x, w_ih, w_hh, bias, hidden: h, gates: z, cells };
        self.push("lstm", Tensor::matrix(t_len, h, out)?, Op::Lstm(Box::new(cache)), &[x, w_ih, w_hh, bias])
    }

    /// Causal local bilinear attention.
    ///
    /// For frame `t` the window is `max(0, t-window) ..= t`. The key of frame
    /// `k` seen from query `t` is `[prefix_t ; keys_k]` when a prefix is given
    /// and `keys_k` otherwise; the score is `keyᵀ · weight · queries_t`.
    /// Returns the context `[T×D_v]` and the attention weights.
    pub fn causal_attention(
        &mut self,
        keys: Var,
        queries: Var,
        values: Var,
        weight: Var,
        prefix: Option<Var>,
        window: usize,
    ) -> Result<(Var, AttentionWeights)> {
        if window == 0 {
            return Err(Error::Config("attention window must be >= 1".into()));
        }
        let (t_len, dk) = self.value(keys).dims2()?;
        let (tq, dq) = self.value(queries).dims2()?;
        let (tv, dv) = self.value(values).dims2()?;
        if tq != t_len || tv != t_len {
            return Err(dim_err!("attention: frame counts {t_len}/{tq}/{tv} differ"));
        }
        let dp = match prefix {
            Some(p) => {
                let (tp, dp) = self.value(p).dims2()?;
                if tp != t_len {
                    return Err(dim_err!("attention: prefix has {tp} frames, expected {t_len}"));
                }
                dp
            }
            None => 0,
        };
        let dkey = dp + dk;
        if self.value(weight).shape() != [dkey, dq] {
            return Err(dim_err!(
                "attention: weight {:?}, expected [{dkey}, {dq}]",
                self.value(weight).shape()
            ));
        }
        let mut projected = vec![0.0; t_len * dkey];
        matmul_bt_into(self.value(queries).data(), self.value(weight).data(), &mut projected, t_len, dq, dkey);
        let kd = self.value(keys).data();
        let vd = self.value(values).data();
        let mut weights = AttentionWeights::new(t_len, window);
        let mut context = vec![0.0; t_len * dv];
        let mut scores = Vec::with_capacity(window + 1);
        for t in 0..t_len {
            let proj = &projected[t * dkey..(t + 1) * dkey];
            let offset = match prefix {
                Some(p) => dot(self.value(p).row(t), &proj[..dp]),
                None => 0.0,
            };
            let start = t.saturating_sub(window);
            scores.clear();
            scores.extend((start..=t).map(|k| offset + dot(&kd[k * dk..(k + 1) * dk], &proj[dp..])));
            softmax_in_place(&mut scores);
            let ctx = &mut context[t * dv..(t + 1) * dv];
            weights.row_mut(t).copy_from_slice(&scores);
            for (a, k) in scores.iter().zip(start..=t) {
                for (c, &v) in ctx.iter_mut().zip(&vd[k * dv..(k + 1) * dv]) {
                    *c += a * v;
                }
            }
        }
        let cache = AttentionCache { keys, queries, values, weight, prefix, window, projected, weights: weights.clone() };
        let mut inputs = vec![keys, queries, values, weight];
        inputs.extend(prefix);
        let v = self.push("attention", Tensor::matrix(t_len, dv, context)?, Op::Attention(Box::new(cache)), &inputs)?;
        Ok((v, weights))
    }

    /// Sums rows of `x: [T×L]` placed `hop` samples apart, keeping the first
    /// `out_len` samples.
    pub fn overlap_add(&mut self, x: Var, hop: usize, out_len: usize) -> Result<Var> {
        let (t_len, l) = self.value(x).dims2()?;
        if hop == 0 || out_len == 0 {
            return Err(dim_err!("overlap_add: hop and output length must be positive"));
        }
        let full = (t_len - 1) * hop + l;
        if out_len > full {
            return Err(dim_err!("overlap_add: {t_len} segments cover {full} samples, asked for {out_len}"));
        }
        let mut out = vec![0.0; full];
        for (t, seg) in self.value(x).data().chunks(l).enumerate() {
            for (o, s) in out[t * hop..t * hop + l].iter_mut().zip(seg) {
                *o += s;
            }
        }
        out.truncate(out_len);
        self.push("overlap_add", Tensor::vector(out)?, Op::OverlapAdd { x, hop }, &[x])
    }

    /// Summed cross-entropy of per-row logits `[T×C]` against per-row labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (t_len, c) = self.value(logits).dims2()?;
        if labels.len() != t_len {
            return Err(dim_err!("cross_entropy: {} labels for {t_len} rows", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Contract(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0;
        for (row, &label) in probs.chunks_mut(c).zip(labels) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[label];
            softmax_in_place(row);
        }
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        self.push("cross_entropy", Tensor::scalar(total), op, &[logits])
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every tracked leaf receives a gradient; leaves the loss does not
    /// depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => Tensor::new(node.value.shape(), g).ok(),
                (Op::Leaf, None) if node.requires_grad => Some(Tensor::zeros(node.value.shape())),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let tracked = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if tracked(v) {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(slot);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().1;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|s| matmul_bt_into(g, bv, s, m, n, k));
                acc(*b, &|s| matmul_at_into(av, g, s, m, k, n));
            }
            Op::Linear { x, w, b } => {
                let (t, din) = self.value(*x).dims2().unwrap();
                let dout = self.value(*w).dims2().unwrap().0;
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &|s| matmul_into(g, wv, s, t, dout, din));
                acc(*w, &|s| matmul_at_into(g, xv, s, t, dout, din));
                if let Some(b) = b {
                    acc(*b, &|s| {
                        for row in g.chunks(dout) {
                            for (o, r) in s.iter_mut().zip(row) {
                                *o += r;
                            }
                        }
                    });
                }
            }
            Op::Unary(op, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += g[i]
                            * match op {
                                Unary::Relu => {
                                    if x[i] > 0.0 {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                                Unary::Sigmoid => y[i] * (1.0 - y[i]),
                                Unary::Tanh => 1.0 - y[i] * y[i],
                                Unary::Square => 2.0 * x[i],
                            };
                    }
                });
            }
            Op::Binary(op, a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                match op {
                    Binary::Add | Binary::Sub => {
                        let sign = if *op == Binary::Add { 1.0 } else { -1.0 };
                        acc(*a, &|s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += gi));
                        acc(*b, &|s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += sign * gi));
                    }
                    Binary::Mul => {
                        acc(*a, &|s| s.iter_mut().zip(g).zip(y).for_each(|((o, gi), yi)| *o += gi * yi));
                        acc(*b, &|s| s.iter_mut().zip(g).zip(x).for_each(|((o, gi), xi)| *o += gi * xi));
                    }
                }
            }
            Op::Scale(a, c) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi)),
            Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|o| *o += g[0])),
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap();
                acc(*a, &|s| {
                    for ((srow, yrow), grow) in s.chunks_mut(width).zip(y.chunks(width)).zip(g.chunks(width)) {
                        let inner = dot(yrow, grow);
                        for j in 0..width {
                            srow[j] += yrow[j] * (grow[j] - inner);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.dims2().unwrap().1;
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).dims2().unwrap().1;
                    acc(p, &|s| {
                        for (srow, grow) in s.chunks_mut(w).zip(g.chunks(total)) {
                            for (o, gi) in srow.iter_mut().zip(&grow[col..col + w]) {
                                *o += gi;
                            }
                        }
                    });
                    col += w;
                }
            }
            Op::Lstm(cache) => self.lstm_backward(node, cache, g, grads),
            Op::Attention(cache) => self.attention_backward(cache, g, grads),
            Op::OverlapAdd { x, hop } => {
                let l = self.value(*x).dims2().unwrap().1;
                acc(*x, &|s| {
                    for (t, srow) in s.chunks_mut(l).enumerate() {
                        for (j, o) in srow.iter_mut().enumerate() {
                            if let Some(gi) = g.get(t * hop + j) {
                                *o += gi;
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).dims2().unwrap().1;
                acc(*logits, &|s| {
                    for ((srow, prow), &label) in s.chunks_mut(c).zip(probs.chunks(c)).zip(labels) {
                        for j in 0..c {
                            let target = if j == label { 1.0 } else { 0.0 };
                            srow[j] += g[0] * (prow[j] - target);
                        }
                    }
                });
            }
        }
    }

    fn lstm_backward(&self, node: &Node, c: &LstmCache, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (t_len, d) = self.value(c.x).dims2().unwrap();
        let h = c.hidden;
        let g4 = 4 * h;
        let out = node.value.data();
        let whh = self.value(c.w_hh).data();
        let mut dz = vec![0.0; t_len * g4];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for t in (0..t_len).rev() {
            let gates = &c.gates[t * g4..(t + 1) * g4];
            let dzt = &mut dz[t * g4..(t + 1) * g4];
            for j in 0..h {
                let (i, f, gg, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let cell = c.cells[t * h + j];
                let c_prev = if t > 0 { c.cells[(t - 1) * h + j] } else { 0.0 };
                let tc = cell.tanh();
                let dh = g[t * h + j] + dh_next[j];
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                dzt[j] = dc * gg * i * (1.0 - i);
                dzt[h + j] = dc * c_prev * f * (1.0 - f);
                dzt[2 * h + j] = dc * i * (1.0 - gg * gg);
                dzt[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            dh_next.iter_mut().for_each(|x| *x = 0.0);
            if t > 0 {
                matmul_into(dzt, whh, &mut dh_next, 1, g4, h);
            }
        }
        let xv = self.value(c.x).data();
        let wih = self.value(c.w_ih).data();
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if self.nodes[v.0].requires_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(slot);
            }
        };
        acc(c.x, &|s| matmul_into(&dz, wih, s, t_len, g4, d));
        acc(c.w_ih, &|s| matmul_at_into(&dz, xv, s, t_len, g4, d));
        acc(c.w_hh, &|s| {
            if t_len > 1 {
                matmul_at_into(&dz[g4..], &out[..(t_len - 1) * h], s, t_len - 1, g4, h);
            }
        });
        acc(c.bias, &|s| {
            for row in dz.chunks(g4) {
                s.iter_mut().zip(row).for_each(|(o, r)| *o += r);
            }
        });
    }

    fn attention_backward(&self, c: &AttentionCache, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (t_len, dk) = self.value(c.keys).dims2().unwrap();
        let dq = self.value(c.queries).dims2().unwrap().1;
        let dv = self.value(c.values).dims2().unwrap().1;
        let dp = c.prefix.map_or(0, |p| self.value(p).dims2().unwrap().1);
        let dkey = dp + dk;
        let kd = self.value(c.keys).data();
        let vd = self.value(c.values).data();
        let wd = self.value(c.weight).data();
        let qd = self.value(c.queries).data();

        let mut d_keys = vec![0.0; t_len * dk];
        let mut d_values = vec![0.0; t_len * dv];
        let mut d_prefix = vec![0.0; t_len * dp];
        // u_t = Σ_k dscore_tk · key_tk, the gradient w.r.t. W·q_t
        let mut u = vec![0.0; t_len * dkey];
        let mut dscore = Vec::with_capacity(c.window + 1);
        for t in 0..t_len {
            let start = t.saturating_sub(c.window);
            let gt = &g[t * dv..(t + 1) * dv];
            let (_, alpha) = c.weights.row(t);
            dscore.clear();
            dscore.extend((start..=t).map(|k| dot(gt, &vd[k * dv..(k + 1) * dv])));
            let mean = dot(alpha, &dscore);
            for (ds, a) in dscore.iter_mut().zip(alpha) {
                *ds = a * (*ds - mean);
            }
            let proj = &c.projected[t * dkey..(t + 1) * dkey];
            let ut = &mut u[t * dkey..(t + 1) * dkey];
            let total: f64 = dscore.iter().sum();
            if let Some(p) = c.prefix {
                let prow = self.value(p).row(t);
                for j in 0..dp {
                    ut[j] += total * prow[j];
                    d_prefix[t * dp + j] += total * proj[j];
                }
            }
            for ((k, ds), a) in (start..=t).zip(&dscore).zip(alpha) {
                for j in 0..dk {
                    ut[dp + j] += ds * kd[k * dk + j];
                    d_keys[k * dk + j] += ds * proj[dp + j];
                }
                for j in 0..dv {
                    d_values[k * dv + j] += a * gt[j];
                }
            }
        }
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if self.nodes[v.0].requires_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(slot);
            }
        };
        acc(c.keys, &|s| s.iter_mut().zip(&d_keys).for_each(|(o, x)| *o += x));
        acc(c.values, &|s| s.iter_mut().zip(&d_values).for_each(|(o, x)| *o += x));
        acc(c.weight, &|s| matmul_at_into(&u, qd, s, t_len, dkey, dq));
        acc(c.queries, &|s| matmul_into(&u, wd, s, t_len, dkey, dq));
        if let Some(p) = c.prefix {
            acc(p, &|s| s.iter_mut().zip(&d_prefix).for_each(|(o, x)| *o += x));
        }
    }
}
