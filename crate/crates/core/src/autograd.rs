//! A small reverse-mode tape over 2-D `f64` arrays.
//!
//! A [`Graph`] borrows parameter values from a [`ParameterStore`], records
//! every operation with whatever it needs for the backward pass, and
//! [`Graph::backward`] returns gradients for the parameters that were
//! trainable when the graph was built. Frozen parameters are leaves without
//! gradient, so no weight gradient is ever formed for them.
//!
//! Row-major token matrices are the common currency: a batch of `B` windows
//! with `T` tokens each and width `D` is a `(B·T) × D` array.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::Result;
use crate::params::ParameterStore;

pub type NodeId = usize;
pub type Gradients = BTreeMap<String, Array2<f64>>;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// tanh approximation, as used by GPT-2.
    Gelu,
    Silu,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            Self::Silu => x * sigmoid(x),
            Self::Relu => x.max(0.0),
            Self::Sigmoid => sigmoid(x),
            Self::Tanh => x.tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Gelu => {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
            Self::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Self::Tanh => 1.0 - x.tanh().powi(2),
        }
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

/// Shape of a batched attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSpec {
    /// Windows in the batch.
    pub batch: usize,
    /// Tokens per window.
    pub tokens: usize,
    pub n_heads: usize,
    /// Key/value heads; each serves `n_heads / n_kv_heads` query heads.
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub causal: bool,
}

impl AttentionSpec {
    pub fn kv_head_for(&self, head: usize) -> usize {
        head / (self.n_heads / self.n_kv_heads)
    }
}

enum Value<'a> {
    Owned(Array2<f64>),
    Borrowed(&'a Array2<f64>),
}

impl Value<'_> {
    fn get(&self) -> &Array2<f64> {
        match self {
            Value::Owned(a) => a,
            Value::Borrowed(a) => a,
        }
    }
}

struct AttentionTape {
    q: NodeId,
    k: NodeId,
    v: NodeId,
    inv_freq: Option<NodeId>,
    spec: AttentionSpec,
    q_rot: Array2<f64>,
    k_rot: Array2<f64>,
    /// Softmax weights, indexed `batch * n_heads + head`, each `T × T`.
    probs: Vec<Array2<f64>>,
}

enum Op {
    Leaf,
    Param(String),
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Array2<f64>),
    Scale(NodeId, f64),
    Act(NodeId, Activation),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: Option<NodeId>,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    RmsNorm {
        x: NodeId,
        gain: NodeId,
        inv_rms: Vec<f64>,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    Reshape(NodeId),
    GatherRows {
        table: NodeId,
        indices: Vec<usize>,
    },
    RowAffine {
        x: NodeId,
        scale: Vec<f64>,
    },
    Attention(Box<AttentionTape>),
    Mse {
        pred: NodeId,
        target: Array2<f64>,
    },
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node<'a>>,
    params: HashMap<String, NodeId>,
    track: bool,
}

impl<'a> Graph<'a> {
    /// `track = false` builds an inference-only graph with no gradients.
    pub fn new(store: &'a ParameterStore, track: bool) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            track,
        }
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        self.nodes[id].value.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Value<'a>, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = self.track && inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push_with(value, op, requires_grad)
    }

    fn push_with(&mut self, value: Value<'a>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn owned(&mut self, value: Array2<f64>, op: Op, inputs: &[NodeId]) -> NodeId {
        self.push(Value::Owned(value), op, inputs)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push_with(Value::Owned(value), Op::Leaf, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let store = self.store;
        let value = store.get(name)?;
        let requires_grad = self.track && store.is_trainable(name);
        let id = self.push_with(
            Value::Borrowed(value),
            Op::Param(name.to_string()),
            requires_grad,
        );
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.owned(v, Op::MatMul(a, b), &[a, b])
    }

    /// `x + bias` with a `1 × n` bias broadcast over rows.
    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let v = self.value(x) + self.value(bias);
        self.owned(v, Op::AddRow(x, bias), &[x, bias])
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let y = self.matmul(x, w);
        match b {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.owned(v, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.owned(v, Op::Mul(a, b), &[a, b])
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, x: NodeId, mask: Array2<f64>) -> NodeId {
        let v = self.value(x) * &mask;
        self.owned(v, Op::MulConst(x, mask), &[x])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let v = self.value(x) * factor;
        self.owned(v, Op::Scale(x, factor), &[x])
    }

    pub fn act(&mut self, x: NodeId, f: Activation) -> NodeId {
        let v = self.value(x).mapv(|e| f.apply(e));
        self.owned(v, Op::Act(x, f), &[x])
    }

    /// Row-wise layer normalization with population variance.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: Option<NodeId>,
        eps: f64,
    ) -> NodeId {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / d;
            let r = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|e| (e - mean) * r);
            inv_std.push(r);
        }
        let mut y = &xhat * self.value(gain);
        if let Some(b) = bias {
            y += self.value(b);
        }
        let inputs: Vec<NodeId> = [x, gain].into_iter().chain(bias).collect();
        self.owned(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &inputs,
        )
    }

    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let inv_rms: Vec<f64> = xv
            .rows()
            .into_iter()
            .map(|row| 1.0 / (row.iter().map(|e| e * e).sum::<f64>() / d + eps).sqrt())
            .collect();
        let mut y = xv.clone();
        for (mut row, r) in y.rows_mut().into_iter().zip(&inv_rms) {
            row *= *r;
        }
        y *= self.value(gain);
        self.owned(y, Op::RmsNorm { x, gain, inv_rms }, &[x, gain])
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.owned(v, Op::SliceCols { x, start }, &[x])
    }

    /// Row-major reshape (element order unchanged).
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let flat: Vec<f64> = self.value(x).iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("reshape preserves size");
        self.owned(v, Op::Reshape(x), &[x])
    }

    /// Rows of `table` at `indices`, in order.
    pub fn gather_rows(&mut self, table: NodeId, indices: Vec<usize>) -> NodeId {
        let v = self.value(table).select(Axis(0), &indices);
        self.owned(v, Op::GatherRows { table, indices }, &[table])
    }

    /// `x[r, :] * scale[r] + shift[r]` with constant per-row factors.
    pub fn row_affine(&mut self, x: NodeId, scale: Vec<f64>, shift: Vec<f64>) -> NodeId {
        let mut v = self.value(x).clone();
        for ((mut row, a), b) in v.rows_mut().into_iter().zip(&scale).zip(&shift) {
            row.mapv_inplace(|e| e * a + b);
        }
        self.owned(v, Op::RowAffine { x, scale }, &[x])
    }

    /// Scaled dot-product attention with grouped key/value heads and optional
    /// pairwise rotary position encoding (`inv_freq` is `1 × head_dim/2`).
    ///
    /// `q` is `(B·T) × (n_heads·d)`; `k` and `v` are `(B·T) × (n_kv_heads·d)`.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        inv_freq: Option<NodeId>,
        spec: AttentionSpec,
    ) -> NodeId {
        let freqs = inv_freq.map(|f| self.value(f).row(0).to_vec());
        let mut q_rot = self.value(q).clone();
        let mut k_rot = self.value(k).clone();
        if let Some(f) = &freqs {
            rotate_pairs(&mut q_rot, spec.tokens, spec.head_dim, f, 1.0);
            rotate_pairs(&mut k_rot, spec.tokens, spec.head_dim, f, 1.0);
        }
        let (out, probs) =
            attention_forward(q_rot.view(), k_rot.view(), self.value(v).view(), &spec);
        let inputs: Vec<NodeId> = [q, k, v].into_iter().chain(inv_freq).collect();
        self.owned(
            out,
            Op::Attention(Box::new(AttentionTape {
                q,
                k,
                v,
                inv_freq,
                spec,
                q_rot,
                k_rot,
                probs,
            })),
            &inputs,
        )
    }

    /// Mean squared error against a constant target; yields a `1 × 1` node.
    pub fn mse(&mut self, pred: NodeId, target: Array2<f64>) -> NodeId {
        let diff = self.value(pred) - &target;
        let v = diff.mapv(|e| e * e).mean().unwrap_or(0.0);
        self.owned(
            Array2::from_elem((1, 1), v),
            Op::Mse { pred, target },
            &[pred],
        )
    }

    /// Gradients of the scalar node `loss` with respect to every trainable
    /// parameter that took part in it.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients::new();
        if !self.nodes[loss].requires_grad {
            return out;
        }
        grads[loss] = Some(Array2::ones(self.value(loss).raw_dim()));

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: NodeId, grad: Array2<f64>| {
                if self.nodes[target].requires_grad {
                    accumulate(&mut grads[target], grad);
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(name) => {
                    out.insert(name.clone(), g);
                }
                Op::MatMul(a, b) => {
                    if self.nodes[*a].requires_grad {
                        send(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.nodes[*b].requires_grad {
                        send(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddRow(x, b) => {
                    if self.nodes[*b].requires_grad {
                        send(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    send(*x, g);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Mul(a, b) => {
                    send(*a, &g * self.value(*b));
                    send(*b, &g * self.value(*a));
                }
                Op::MulConst(x, mask) => send(*x, &g * mask),
                Op::Scale(x, f) => send(*x, g * *f),
                Op::Act(x, f) => {
                    let mut dx = self.value(*x).mapv(|e| f.derivative(e));
                    dx *= &g;
                    send(*x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    if let Some(b) = bias {
                        if self.nodes[*b].requires_grad {
                            send(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                        }
                    }
                    if self.nodes[*gain].requires_grad {
                        send(*gain, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.nodes[*x].requires_grad {
                        let dxhat = &g * self.value(*gain);
                        let d = dxhat.ncols() as f64;
                        let mut dx = dxhat.clone();
                        for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                            let xh = xhat.row(r);
                            let m1 = row.sum() / d;
                            let m2 = row.dot(&xh) / d;
                            Zip::from(&mut row)
                                .and(&xh)
                                .for_each(|e, &h| *e = inv_std[r] * (*e - m1 - h * m2));
                        }
                        send(*x, dx);
                    }
                }
                Op::RmsNorm { x, gain, inv_rms } => {
                    let xv = self.value(*x);
                    if self.nodes[*gain].requires_grad {
                        let mut normed = xv.clone();
                        for (mut row, r) in normed.rows_mut().into_iter().zip(inv_rms) {
                            row *= *r;
                        }
                        send(*gain, (&g * &normed).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.nodes[*x].requires_grad {
                        let dn = &g * self.value(*gain);
                        let d = dn.ncols() as f64;
                        let mut dx = dn.clone();
                        for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                            let xr = xv.row(r);
                            let inv = inv_rms[r];
                            let m = row.dot(&xr) / d;
                            Zip::from(&mut row)
                                .and(&xr)
                                .for_each(|e, &xe| *e = inv * (*e - xe * inv * inv * m));
                        }
                        send(*x, dx);
                    }
                }
                Op::SliceCols { x, start } => {
                    let mut dx = Array2::zeros(self.value(*x).raw_dim());
                    dx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    send(*x, dx);
                }
                Op::Reshape(x) => {
                    let dim = self.value(*x).raw_dim();
                    let flat: Vec<f64> = g.iter().copied().collect();
                    send(*x, Array2::from_shape_vec(dim, flat).expect("same size"));
                }
                Op::GatherRows { table, indices } => {
                    let mut dt = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &ix) in indices.iter().enumerate() {
                        let mut row = dt.row_mut(ix);
                        row += &g.row(r);
                    }
                    send(*table, dt);
                }
                Op::RowAffine { x, scale } => {
                    let mut dx = g;
                    for (mut row, a) in dx.rows_mut().into_iter().zip(scale) {
                        row *= *a;
                    }
                    send(*x, dx);
                }
                Op::Attention(tape) => {
                    for (target, grad) in self.attention_backward(tape, &g) {
                        send(target, grad);
                    }
                }
                Op::Mse { pred, target } => {
                    let n = target.len() as f64;
                    let upstream = g[[0, 0]];
                    let dp = (self.value(*pred) - target) * (2.0 * upstream / n);
                    send(*pred, dp);
                }
            }
        }
        out
    }

    fn attention_backward(
        &self,
        t: &AttentionTape,
        d_out: &Array2<f64>,
    ) -> Vec<(NodeId, Array2<f64>)> {
        let spec = t.spec;
        let (tk, dh) = (spec.tokens, spec.head_dim);
        let scale = 1.0 / (dh as f64).sqrt();
        let v = self.value(t.v);
        let mut dq = Array2::zeros(t.q_rot.raw_dim());
        let mut dk = Array2::zeros(t.k_rot.raw_dim());
        let mut dv = Array2::zeros(v.raw_dim());
        for b in 0..spec.batch {
            let rows = b * tk..(b + 1) * tk;
            for h in 0..spec.n_heads {
                let g = spec.kv_head_for(h);
                let qc = h * dh..(h + 1) * dh;
                let kc = g * dh..(g + 1) * dh;
                let p = &t.probs[b * spec.n_heads + h];
                let d_o = d_out.slice(s![rows.clone(), qc.clone()]);
                let v_g = v.slice(s![rows.clone(), kc.clone()]);
                let q_h = t.q_rot.slice(s![rows.clone(), qc.clone()]);
                let k_g = t.k_rot.slice(s![rows.clone(), kc.clone()]);

                let dp = d_o.dot(&v_g.t());
                let mut ds = &dp * p;
                for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot: f64 = row.sum();
                    Zip::from(&mut row)
                        .and(&prow)
                        .for_each(|e, &pe| *e -= pe * dot);
                }
                ds *= scale;

                let mut dv_slot = dv.slice_mut(s![rows.clone(), kc.clone()]);
                dv_slot += &p.t().dot(&d_o);
                let mut dq_slot = dq.slice_mut(s![rows.clone(), qc]);
                dq_slot += &ds.dot(&k_g);
                let mut dk_slot = dk.slice_mut(s![rows.clone(), kc]);
                dk_slot += &ds.t().dot(&q_h);
            }
        }

        let mut result = Vec::with_capacity(4);
        if let Some(f) = t.inv_freq {
            let freqs = self.value(f).row(0).to_vec();
            if self.nodes[f].requires_grad {
                let mut dfreq = Array2::zeros((1, freqs.len()));
                rotary_freq_grad(&mut dfreq, &dq, &t.q_rot, tk, dh);
                rotary_freq_grad(&mut dfreq, &dk, &t.k_rot, tk, dh);
                result.push((f, dfreq));
            }
            // Rotations are orthogonal: the input gradient is the inverse rotation.
            rotate_pairs(&mut dq, tk, dh, &freqs, -1.0);
            rotate_pairs(&mut dk, tk, dh, &freqs, -1.0);
        }
        result.push((t.q, dq));
        result.push((t.k, dk));
        result.push((t.v, dv));
        result
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, grad: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &grad,
        None => *slot = Some(grad),
    }
}

/// Rotates each consecutive pair `(x[2i], x[2i+1])` of every head by
/// `sign · t · freqs[i]`, where `t` is the row's token position.
pub fn rotate_pairs(x: &mut Array2<f64>, tokens: usize, head_dim: usize, freqs: &[f64], sign: f64) {
    let n_heads = x.ncols() / head_dim;
    for (r, mut row) in x.rows_mut().into_iter().enumerate() {
        let pos = (r % tokens) as f64;
        if pos == 0.0 {
            continue;
        }
        for (i, &f) in freqs.iter().enumerate() {
            let (sin, cos) = (sign * pos * f).sin_cos();
            for h in 0..n_heads {
                let c = h * head_dim + 2 * i;
                let (a, b) = (row[c], row[c + 1]);
                row[c] = a * cos - b * sin;
                row[c + 1] = a * sin + b * cos;
            }
        }
    }
}

/// d(loss)/d(freq_i) given the gradient and value of the rotated matrix.
fn rotary_freq_grad(
    acc: &mut Array2<f64>,
    d_rot: &Array2<f64>,
    rot: &Array2<f64>,
    tokens: usize,
    head_dim: usize,
) {
    let n_heads = rot.ncols() / head_dim;
    let half = head_dim / 2;
    for (r, (g, y)) in d_rot.rows().into_iter().zip(rot.rows()).enumerate() {
        let pos = (r % tokens) as f64;
        for i in 0..half {
            let mut s = 0.0;
            for h in 0..n_heads {
                let c = h * head_dim + 2 * i;
                s += g[c] * -y[c + 1] + g[c + 1] * y[c];
            }
            acc[[0, i]] += pos * s;
        }
    }
}

/// Plain attention forward on already-rotated inputs.
pub fn attention_forward(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    spec: &AttentionSpec,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (tk, dh) = (spec.tokens, spec.head_dim);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), spec.n_heads * dh));
    let mut probs = Vec::with_capacity(spec.batch * spec.n_heads);
    for b in 0..spec.batch {
        let rows = b * tk..(b + 1) * tk;
        for h in 0..spec.n_heads {
            let g = spec.kv_head_for(h);
            let q_h = q.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
            let k_g = k.slice(s![rows.clone(), g * dh..(g + 1) * dh]);
            let v_g = v.slice(s![rows.clone(), g * dh..(g + 1) * dh]);
            let mut p = q_h.dot(&k_g.t()) * scale;
            for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                let visible = if spec.causal { i + 1 } else { tk };
                let max = row
                    .iter()
                    .take(visible)
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (j, e) in row.iter_mut().enumerate() {
                    if j < visible {
                        *e = (*e - max).exp();
                        sum += *e;
                    } else {
                        *e = 0.0;
                    }
                }
                row /= sum;
            }
            out.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh])
                .assign(&p.dot(&v_g));
            probs.push(p);
        }
    }
    (out, probs)
}
