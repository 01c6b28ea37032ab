//! Reverse-mode tape over [`Tensor2D`] values.
//!
//! A tape is rebuilt for every batch: forward ops append nodes holding their
//! output, and [`Tape::backward`] walks the nodes in reverse applying each op's
//! analytic adjoint. Parameter leaves borrow their value from the
//! [`ParameterStore`] instead of copying it.

use std::collections::HashMap;

use crate::error::{GenliError, Result};
use crate::nn::params::{Gradients, ParamId, ParameterStore};
use crate::nn::tensor::{gemm, Tensor2D};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Shape of a grouped attention call: `groups` independent problems, each with
/// `queries` query rows attending over `keys` key/value rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnShape {
    pub groups: usize,
    pub queries: usize,
    pub keys: usize,
    pub heads: usize,
}

struct AttnCache {
    q: Var,
    k: Var,
    v: Var,
    shape: AttnShape,
    head_dim: usize,
    mask: Vec<bool>,
    probs: Vec<f64>,
}

enum Op {
    Input,
    Param(ParamId),
    Embed { table: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    PRelu(Var, Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Reshape(Var),
    Attention(Box<AttnCache>),
    SegmentMean { src: Var, seg: usize, mask: Vec<bool>, counts: Vec<usize> },
    BceWithLogits { logits: Var, labels: Vec<f64> },
    NllLookup { probs: Var, picks: Vec<(usize, f64)> },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Option<Tensor2D>,
    op: Op,
}

/// Probability floor inside `-ln p`.
pub const LOG_FLOOR: f64 = 1e-12;

pub struct Tape<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> GenliError {
    GenliError::config(format!("{what}: shape mismatch {a:?} vs {b:?}"))
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Tape { store, nodes: Vec::new(), params: HashMap::new() }
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor2D {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor2D, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor2D) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Gathers rows of an embedding table. Gradients flow back only into the
    /// gathered rows (and never into padding row 0).
    pub fn embed(&mut self, table: ParamId, rows: Vec<usize>) -> Result<Var> {
        let t = self.store.value(table);
        let mut out = Tensor2D::zeros(rows.len(), t.cols());
        for (i, &r) in rows.iter().enumerate() {
            if r >= t.rows() {
                return Err(GenliError::data(format!(
                    "index {r} out of range for embedding field '{}' (vocabulary size {})",
                    self.store.name(table),
                    t.rows()
                )));
            }
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        Ok(self.push(out, Op::Embed { table, rows }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(shape_err("add_bias", x.shape(), b.shape()));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(b.row(0)) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(what, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor2D::from_vec(x.rows(), x.cols(), data)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::Scale(a, s))
    }

    /// PReLU with a single learnable slope (a 1x1 tensor).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let a = self.value(slope);
        if a.shape() != (1, 1) {
            return Err(shape_err("prelu slope", a.shape(), (1, 1)));
        }
        let a = a.get(0, 0);
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= a
            }
        });
        Ok(self.push(out, Op::PRelu(x, slope)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        if out.cols() == 0 {
            return Err(GenliError::config("softmax over zero columns"));
        }
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        Ok(self.push(out, Op::SoftmaxRows(x)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", (rows, 0), t.shape()));
            }
            cols += t.cols();
        }
        let mut out = Tensor2D::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.value(p).cols()).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", (0, cols), t.shape()));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor2D::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn select_rows(&mut self, src: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(src);
        let mut out = Tensor2D::zeros(idx.len(), t.cols());
        for (i, &r) in idx.iter().enumerate() {
            if r >= t.rows() {
                return Err(GenliError::config(format!("select_rows index {r} >= {}", t.rows())));
            }
            out.row_mut(i).copy_from_slice(t.row(r));
        }
        Ok(self.push(out, Op::SelectRows(src, idx)))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(x).clone().reshaped(rows, cols)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Grouped multi-head scaled dot-product attention on already projected
    /// inputs. `q` is `(groups*queries) x (heads*head_dim)`, `k` and `v` are
    /// `(groups*keys) x (heads*head_dim)`. `mask[g*keys + j] == false` removes
    /// key `j` of group `g` (its logit is treated as -inf).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttnShape, mask: Vec<bool>) -> Result<Var> {
        let AttnShape { groups, queries, keys, heads } = shape;
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        if heads == 0 || qt.cols() % heads != 0 {
            return Err(GenliError::config(format!("{} columns do not split into {heads} heads", qt.cols())));
        }
        let width = qt.cols();
        let dh = width / heads;
        if qt.rows() != groups * queries
            || kt.shape() != (groups * keys, width)
            || vt.shape() != (groups * keys, width)
            || mask.len() != groups * keys
        {
            return Err(GenliError::config(format!(
                "attention shapes q{:?} k{:?} v{:?} mask {} do not match {shape:?}",
                qt.shape(),
                kt.shape(),
                vt.shape(),
                mask.len()
            )));
        }
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; groups * heads * queries * keys];
        let mut out = Tensor2D::zeros(groups * queries, width);
        let mut logits = vec![0.0; keys];
        for g in 0..groups {
            let gmask = &mask[g * keys..(g + 1) * keys];
            if !gmask.iter().any(|&m| m) {
                return Err(GenliError::data(format!("attention group {g} has no valid keys")));
            }
            for h in 0..heads {
                let cs = h * dh..(h + 1) * dh;
                for i in 0..queries {
                    let qi = &qt.row(g * queries + i)[cs.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..keys {
                        if gmask[j] {
                            let kj = &kt.row(g * keys + j)[cs.clone()];
                            let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                            logits[j] = s;
                            max = max.max(s);
                        }
                    }
                    let base = ((g * heads + h) * queries + i) * keys;
                    let p = &mut probs[base..base + keys];
                    let mut sum = 0.0;
                    for j in 0..keys {
                        if gmask[j] {
                            p[j] = (logits[j] - max).exp();
                            sum += p[j];
                        }
                    }
                    let inv = 1.0 / sum;
                    let orow = &mut out.row_mut(g * queries + i)[cs.clone()];
                    for j in 0..keys {
                        if gmask[j] {
                            p[j] *= inv;
                            let vj = &vt.row(g * keys + j)[cs.clone()];
                            for (o, &x) in orow.iter_mut().zip(vj) {
                                *o += p[j] * x;
                            }
                        }
                    }
                }
            }
        }
        let cache = AttnCache { q, k, v, shape, head_dim: dh, mask, probs };
        Ok(self.push(out, Op::Attention(Box::new(cache))))
    }

    /// Attention weights cached by an attention node, laid out
    /// `[group][head][query][key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention(c) => Some(&c.probs),
            _ => None,
        }
    }

    /// Mean over the valid rows of each consecutive `seg`-row segment. A
    /// segment without valid rows yields a zero row.
    pub fn segment_mean(&mut self, src: Var, seg: usize, mask: Vec<bool>) -> Result<Var> {
        let t = self.value(src);
        if seg == 0 || !t.rows().is_multiple_of(seg) || mask.len() != t.rows() {
            return Err(GenliError::config("segment_mean: rows not divisible into segments"));
        }
        let groups = t.rows() / seg;
        let mut out = Tensor2D::zeros(groups, t.cols());
        let mut counts = vec![0; groups];
        for g in 0..groups {
            for j in 0..seg {
                if mask[g * seg + j] {
                    counts[g] += 1;
                    let row = t.row(g * seg + j);
                    for (o, &x) in out.row_mut(g).iter_mut().zip(row) {
                        *o += x;
                    }
                }
            }
            if counts[g] > 0 {
                let inv = 1.0 / counts[g] as f64;
                out.row_mut(g).iter_mut().for_each(|v| *v *= inv);
            }
        }
        Ok(self.push(out, Op::SegmentMean { src, seg, mask, counts }))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`.
    pub fn bce_with_logits_mean(&mut self, logits: Var, labels: Vec<f64>) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != labels.len() || labels.is_empty() {
            return Err(shape_err("bce", z.shape(), (labels.len(), 1)));
        }
        let n = labels.len() as f64;
        let loss: f64 =
            z.data().iter().zip(&labels).map(|(&z, &y)| z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()).sum::<f64>() / n;
        Ok(self.push(Tensor2D::filled(1, 1, loss), Op::BceWithLogits { logits, labels }))
    }

    /// `Σ_i w_i · -ln max(P[i, c_i], LOG_FLOOR)` for `picks[i] = (c_i, w_i)`.
    pub fn nll_lookup(&mut self, probs: Var, picks: Vec<(usize, f64)>) -> Result<Var> {
        let p = self.value(probs);
        if picks.len() != p.rows() {
            return Err(shape_err("nll_lookup", p.shape(), (picks.len(), 0)));
        }
        let mut loss = 0.0;
        for (i, &(c, w)) in picks.iter().enumerate() {
            if c >= p.cols() {
                return Err(GenliError::config(format!("nll_lookup column {c} >= {}", p.cols())));
            }
            if w != 0.0 {
                loss -= w * p.get(i, c).max(LOG_FLOOR).ln();
            }
        }
        Ok(self.push(Tensor2D::filled(1, 1, loss), Op::NllLookup { probs, picks }))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape() != (1, 1) {
                return Err(shape_err("weighted_sum", t.shape(), (1, 1)));
            }
            s += w * t.get(0, 0);
        }
        Ok(self.push(Tensor2D::filled(1, 1, s), Op::WeightedSum(terms.to_vec())))
    }

    /// Back-propagates from a scalar node, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(GenliError::State("backward called on a node that was never computed".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(GenliError::State("backward requires a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor2D>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2D::filled(1, 1, 1.0));
        let mut out = Gradients::new(self.store.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let t = self.store.value(*id);
                    out.slot(*id, t.rows(), t.cols()).add_assign(&g);
                }
                Op::Embed { table, rows } => {
                    let t = self.store.value(*table);
                    let slot = out.slot(*table, t.rows(), t.cols());
                    for (i, &r) in rows.iter().enumerate() {
                        if r == 0 {
                            continue;
                        }
                        for (s, &x) in slot.row_mut(r).iter_mut().zip(g.row(i)) {
                            *s += x;
                        }
                    }
                    let touched = &mut out.touched[table.0];
                    touched.extend(rows.iter().copied().filter(|&r| r != 0));
                    touched.sort_unstable();
                    touched.dedup();
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Tensor2D::zeros(av.rows(), av.cols());
                    gemm(false, true, 1.0, &g, bv, 0.0, &mut da);
                    let mut db = Tensor2D::zeros(bv.rows(), bv.cols());
                    gemm(true, false, 1.0, av, &g, 0.0, &mut db);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddBias(a, b) => {
                    let mut db = Tensor2D::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &x) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    acc(&mut grads, *b, db);
                    acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    let mut neg = g.clone();
                    neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                    acc(&mut grads, *b, neg);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = elementwise(&g, bv, |x, y| x * y);
                    let db = elementwise(&g, av, |x, y| x * y);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.data_mut().iter_mut().for_each(|v| *v *= s);
                    acc(&mut grads, *a, d);
                }
                Op::PRelu(x, slope) => {
                    let xv = self.value(*x);
                    let a = self.value(*slope).get(0, 0);
                    let mut dx = g.clone();
                    let mut da = 0.0;
                    for ((d, &xi), &gi) in dx.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                        if xi < 0.0 {
                            *d = gi * a;
                            da += gi * xi;
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *slope, Tensor2D::filled(1, 1, da));
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().expect("sigmoid value");
                    let dx = elementwise(&g, y, |gi, yi| gi * yi * (1.0 - yi));
                    acc(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(x) => {
                    let y = node.value.as_ref().expect("softmax value");
                    let mut dx = Tensor2D::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, &yi), &gi) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = yi * (gi - dot);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut d = Tensor2D::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        acc(&mut grads, p, d);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let d = Tensor2D::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec())?;
                        off += r;
                        acc(&mut grads, p, d);
                    }
                }
                Op::SelectRows(src, idx) => {
                    let (r, c) = self.value(*src).shape();
                    let mut d = Tensor2D::zeros(r, c);
                    for (i, &row) in idx.iter().enumerate() {
                        for (s, &x) in d.row_mut(row).iter_mut().zip(g.row(i)) {
                            *s += x;
                        }
                    }
                    acc(&mut grads, *src, d);
                }
                Op::Reshape(x) => {
                    let (r, c) = self.value(*x).shape();
                    acc(&mut grads, *x, g.reshaped(r, c)?);
                }
                Op::Attention(cache) => {
                    let (dq, dk, dv) = self.attention_backward(cache, &g);
                    acc(&mut grads, cache.q, dq);
                    acc(&mut grads, cache.k, dk);
                    acc(&mut grads, cache.v, dv);
                }
                Op::SegmentMean { src, seg, mask, counts } => {
                    let (r, c) = self.value(*src).shape();
                    let mut d = Tensor2D::zeros(r, c);
                    for (gi, &n) in counts.iter().enumerate() {
                        if n == 0 {
                            continue;
                        }
                        let inv = 1.0 / n as f64;
                        for j in 0..*seg {
                            if mask[gi * seg + j] {
                                for (s, &x) in d.row_mut(gi * seg + j).iter_mut().zip(g.row(gi)) {
                                    *s = x * inv;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *src, d);
                }
                Op::BceWithLogits { logits, labels } => {
                    let z = self.value(*logits);
                    let scale = g.get(0, 0) / labels.len() as f64;
                    let data = z.data().iter().zip(labels).map(|(&z, &y)| (sigmoid(z) - y) * scale).collect();
                    acc(&mut grads, *logits, Tensor2D::from_vec(z.rows(), 1, data)?);
                }
                Op::NllLookup { probs, picks } => {
                    let p = self.value(*probs);
                    let mut d = Tensor2D::zeros(p.rows(), p.cols());
                    let s = g.get(0, 0);
                    for (i, &(c, w)) in picks.iter().enumerate() {
                        let pv = p.get(i, c);
                        if w != 0.0 && pv > LOG_FLOOR {
                            d.set(i, c, -s * w / pv);
                        }
                    }
                    acc(&mut grads, *probs, d);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        acc(&mut grads, v, Tensor2D::filled(1, 1, w * g.get(0, 0)));
                    }
                }
            }
        }
        Ok(out)
    }

    fn attention_backward(&self, c: &AttnCache, g: &Tensor2D) -> (Tensor2D, Tensor2D, Tensor2D) {
        let AttnShape { groups, queries, keys, heads } = c.shape;
        let dh = c.head_dim;
        let (qt, kt, vt) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let mut dq = Tensor2D::zeros(qt.rows(), qt.cols());
        let mut dk = Tensor2D::zeros(kt.rows(), kt.cols());
        let mut dv = Tensor2D::zeros(vt.rows(), vt.cols());
        let scale = 1.0 / (dh as f64).sqrt();
        let mut da = vec![0.0; keys];
        for gi in 0..groups {
            let gmask = &c.mask[gi * keys..(gi + 1) * keys];
            for h in 0..heads {
                let cs = h * dh..(h + 1) * dh;
                for i in 0..queries {
                    let qrow = g_row(gi, queries, i);
                    let go = &g.row(qrow)[cs.clone()];
                    let base = ((gi * heads + h) * queries + i) * keys;
                    let p = &c.probs[base..base + keys];
                    let mut dot = 0.0;
                    for j in 0..keys {
                        if gmask[j] {
                            let vj = &vt.row(gi * keys + j)[cs.clone()];
                            da[j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                            dot += p[j] * da[j];
                            for (d, &x) in dv.row_mut(gi * keys + j)[cs.clone()].iter_mut().zip(go) {
                                *d += p[j] * x;
                            }
                        }
                    }
                    let qi = &qt.row(qrow)[cs.clone()];
                    for j in 0..keys {
                        if !gmask[j] {
                            continue;
                        }
                        let ds = p[j] * (da[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = &kt.row(gi * keys + j)[cs.clone()];
                        for (d, &x) in dq.row_mut(qrow)[cs.clone()].iter_mut().zip(kj) {
                            *d += ds * x;
                        }
                        for (d, &x) in dk.row_mut(gi * keys + j)[cs.clone()].iter_mut().zip(qi) {
                            *d += ds * x;
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

#[inline]
fn g_row(group: usize, queries: usize, i: usize) -> usize {
    group * queries + i
}

fn elementwise(a: &Tensor2D, b: &Tensor2D, f: impl Fn(f64, f64) -> f64) -> Tensor2D {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor2D::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn acc(grads: &mut [Option<Tensor2D>], v: Var, d: Tensor2D) {
    match &mut grads[v.0] {
        Some(t) => t.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut store = ParameterStore::new();
        let id = store.add("theta", Tensor2D::filled(1, 1, 3.0)).unwrap();
        let mut tape = Tape::new(&store);
        let t = tape.param(id);
        let sq = tape.mul(t, t).unwrap();
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.get(id).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn disconnected_parameter_gets_no_gradient() {
        let mut store = ParameterStore::new();
        let a = store.add("a", Tensor2D::filled(1, 1, 2.0)).unwrap();
        let b = store.add("b", Tensor2D::filled(1, 1, 5.0)).unwrap();
        let mut tape = Tape::new(&store);
        let av = tape.param(a);
        let _bv = tape.param(b);
        let loss = tape.scale(av, 3.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().get(0, 0), 3.0);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn backward_on_foreign_node_is_state_error() {
        let store = ParameterStore::new();
        let mut other_store = ParameterStore::new();
        other_store.add("x", Tensor2D::zeros(1, 1)).unwrap();
        let mut other = Tape::new(&other_store);
        let x = other.input(Tensor2D::zeros(1, 1));
        let tape = Tape::new(&store);
        assert!(matches!(tape.backward(x), Err(GenliError::State(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor2D::zeros(2, 1));
        assert!(matches!(tape.backward(x), Err(GenliError::State(_))));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor2D::row_vector(vec![1000.0, 0.0]));
        let y = tape.softmax_rows(x).unwrap();
        let v = tape.value(y);
        assert!((v.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(v.get(0, 1) >= 0.0 && v.get(0, 1) < 1e-300);
        assert!(v.is_finite());
    }

    #[test]
    fn fully_masked_group_is_data_error() {
        let store = ParameterStore::new();
        let mut tape = Tape::new(&store);
        let q = tape.input(Tensor2D::zeros(1, 2));
        let k = tape.input(Tensor2D::zeros(2, 2));
        let shape = AttnShape { groups: 1, queries: 1, keys: 2, heads: 1 };
        let r = tape.attention(q, k, k, shape, vec![false, false]);
        assert!(matches!(r, Err(GenliError::Data(_))));
    }

    #[test]
    fn embed_out_of_range_names_field() {
        let mut store = ParameterStore::new();
        let t = store.add_embedding("item", Tensor2D::zeros(3, 2)).unwrap();
        let mut tape = Tape::new(&store);
        let err = tape.embed(t, vec![3]).unwrap_err();
        assert!(err.to_string().contains("item"));
    }
}
