//! Single-precision inference for serving-style latency measurements.
//!
//! Everything that depends only on the user (interest distributions,
//! retrieval, key and value projections of retrieved and recent behaviors)
//! is computed once per request; each candidate then pays only for its own
//! query projections, the attention reads, the gate and the CTR head.

use crate::baselines::dot;
use crate::brm::{topk_by_lookup, Bucketer, Kind, Selection};
use crate::data::BehaviorSequence;
use crate::error::{GenliError, Result};
use crate::model::{Model, Variant};
use crate::nn::{Activation, Dense, Mha, ParamId, ParameterStore};

fn to_f32(store: &ParameterStore, id: ParamId) -> Vec<f32> {
    store.value(id).data().iter().map(|&v| v as f32).collect()
}

#[inline(always)]
fn sigmoid32(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug)]
pub struct Linear32 {
    w: Vec<f32>,
    b: Vec<f32>,
    inputs: usize,
    outputs: usize,
    act: Activation,
    slope: f32,
}

impl Linear32 {
    fn from_dense(store: &ParameterStore, d: &Dense) -> Self {
        Linear32 {
            w: to_f32(store, d.weights),
            b: to_f32(store, d.bias),
            inputs: d.inputs,
            outputs: d.outputs,
            act: d.activation,
            slope: d.slope.map_or(0.0, |s| store.value(s).get(0, 0) as f32),
        }
    }

    /// `out = act(x·W + b)`.
    pub fn forward(&self, x: &[f32], out: &mut Vec<f32>) {
        out.clear();
        out.extend_from_slice(&self.b);
        for (i, &xi) in x.iter().enumerate().take(self.inputs) {
            if xi != 0.0 {
                let row = &self.w[i * self.outputs..(i + 1) * self.outputs];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
        }
        match self.act {
            Activation::None => {}
            Activation::PRelu => out.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v *= self.slope
                }
            }),
            Activation::Sigmoid => out.iter_mut().for_each(|v| *v = sigmoid32(*v)),
        }
    }
}

fn mlp_forward(layers: &[Linear32], x: &[f32], a: &mut Vec<f32>, b: &mut Vec<f32>) {
    a.clear();
    a.extend_from_slice(x);
    for l in layers {
        l.forward(a, b);
        std::mem::swap(a, b);
    }
}

/// `x·W` for a row-major `inputs x outputs` matrix.
fn project_into(w: &[f32], x: &[f32], outputs: usize, out: &mut [f32]) {
    out.fill(0.0);
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * outputs..(i + 1) * outputs];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mha32 {
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    heads: usize,
    head_dim: usize,
    width: usize,
}

/// Key and value projections of a fixed behavior set.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    keys: Vec<f32>,
    values: Vec<f32>,
    mask: Vec<bool>,
}

impl Mha32 {
    fn from_mha(store: &ParameterStore, m: &Mha) -> Self {
        Mha32 {
            wq: to_f32(store, m.wq),
            wk: to_f32(store, m.wk),
            wv: to_f32(store, m.wv),
            wo: to_f32(store, m.wo),
            heads: m.cfg.heads,
            head_dim: m.cfg.head_dim,
            width: m.cfg.heads * m.cfg.head_dim,
        }
    }

    pub fn key_values(&self, rows: &[f32], dim: usize, mask: Vec<bool>) -> KeyValues {
        let n = rows.len() / dim;
        let mut keys = vec![0.0; n * self.width];
        let mut values = vec![0.0; n * self.width];
        for r in 0..n {
            if mask[r] {
                let x = &rows[r * dim..(r + 1) * dim];
                project_into(&self.wk, x, self.width, &mut keys[r * self.width..(r + 1) * self.width]);
                project_into(&self.wv, x, self.width, &mut values[r * self.width..(r + 1) * self.width]);
            }
        }
        KeyValues { keys, values, mask }
    }

    pub fn query(&self, x: &[f32]) -> Vec<f32> {
        let mut q = vec![0.0; self.width];
        project_into(&self.wq, x, self.width, &mut q);
        let s = 1.0 / (self.head_dim as f32).sqrt();
        q.iter_mut().for_each(|v| *v *= s);
        q
    }

    /// Attention of one scaled, projected query over cached keys and values;
    /// returns the `head_dim`-wide output after the output projection.
    #[allow(clippy::needless_range_loop)]
    pub fn attend(&self, q: &[f32], kv: &KeyValues, out: &mut [f32]) {
        let dh = self.head_dim;
        let n = kv.mask.len();
        let mut heads = vec![0.0f32; self.width];
        let mut logits = vec![0.0f32; n];
        for h in 0..self.heads {
            let cs = h * dh..(h + 1) * dh;
            let mut max = f32::NEG_INFINITY;
            for j in 0..n {
                if kv.mask[j] {
                    let s = dot(&q[cs.clone()], &kv.keys[j * self.width + cs.start..j * self.width + cs.end]);
                    logits[j] = s;
                    max = max.max(s);
                }
            }
            let mut sum = 0.0;
            for j in 0..n {
                if kv.mask[j] {
                    logits[j] = (logits[j] - max).exp();
                    sum += logits[j];
                }
            }
            let inv = 1.0 / sum;
            let o = &mut heads[cs.clone()];
            for j in 0..n {
                if kv.mask[j] {
                    let p = logits[j] * inv;
                    let v = &kv.values[j * self.width + cs.start..j * self.width + cs.end];
                    for (a, &b) in o.iter_mut().zip(v) {
                        *a += p * b;
                    }
                }
            }
        }
        project_into(&self.wo, &heads, dh, out);
    }
}

#[derive(Clone, Debug)]
struct Head32 {
    query: Vec<f32>,
    attention: Mha32,
    merge: Vec<f32>,
    mlp: Vec<Linear32>,
}

/// Everything a request computes once for its user.
#[derive(Clone, Debug)]
pub struct UserState {
    pub distributions: [Option<Vec<f32>>; 3],
    pub selections: [Option<Selection<f32>>; 3],
    long: [Option<KeyValues>; 3],
    short: KeyValues,
    pub long_pool: Vec<f32>,
}

/// Stage durations accumulated by [`Engine::user_state_timed`].
#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimes {
    pub generation_ns: u128,
    pub retrieval_ns: u128,
    pub fusion_ns: u128,
}

/// Frozen single-precision copy of a trained model.
#[derive(Clone, Debug)]
pub struct Engine {
    variant: Variant,
    item_emb: Vec<f32>,
    cat_emb: Vec<f32>,
    item_dim: usize,
    cat_dim: usize,
    heads: [Option<Head32>; 2],
    long: [Option<Mha32>; 3],
    gate: Vec<Linear32>,
    projection: Vec<f32>,
    short: Mha32,
    ctr: Vec<Linear32>,
    bucketer: Bucketer,
    k: usize,
    short_len: usize,
    head_dim: usize,
    buckets: usize,
}

impl Engine {
    pub fn new(model: &Model, store: &ParameterStore) -> Result<Self> {
        let variant = model.cfg.model;
        if !matches!(variant, Variant::Genli { .. } | Variant::AvgPool) {
            return Err(GenliError::config(format!("no single-precision engine for model '{variant}'")));
        }
        let head = |h: &Option<crate::igm::InterestHead>| {
            h.as_ref().map(|h| Head32 {
                query: to_f32(store, h.query),
                attention: Mha32::from_mha(store, &h.attention),
                merge: to_f32(store, h.merge),
                mlp: h.mlp.layers.iter().map(|d| Linear32::from_dense(store, d)).collect(),
            })
        };
        let mut long: [Option<Mha32>; 3] = Default::default();
        if variant.is_genli() {
            for (slot, att) in model.long.iter().enumerate() {
                long[slot] = att.as_ref().map(|a| Mha32::from_mha(store, &a.attention));
            }
        }
        let (gate, projection) = match &model.fusion {
            Some(f) => {
                (f.gate.layers.iter().map(|d| Linear32::from_dense(store, d)).collect(), to_f32(store, f.projection))
            }
            None => (Vec::new(), Vec::new()),
        };
        Ok(Engine {
            variant,
            item_emb: to_f32(store, model.tables.item),
            cat_emb: to_f32(store, model.tables.category),
            item_dim: model.tables.item_dim,
            cat_dim: model.tables.category_dim,
            heads: [head(&model.implicit), head(&model.explicit)],
            long,
            gate,
            projection,
            short: Mha32::from_mha(store, &model.short.attention),
            ctr: model.ctr.mlp.layers.iter().map(|d| Linear32::from_dense(store, d)).collect(),
            bucketer: model.bucketer,
            k: model.cfg.k,
            short_len: model.cfg.short_len,
            head_dim: model.cfg.head_dim,
            buckets: model.cfg.buckets,
        })
    }

    pub fn dim(&self) -> usize {
        self.item_dim + self.cat_dim
    }

    pub fn embed_into(&self, item: u32, cat: u32, out: &mut [f32]) {
        let (i, c) = (item as usize, cat as usize);
        out[..self.item_dim].copy_from_slice(&self.item_emb[i * self.item_dim..(i + 1) * self.item_dim]);
        out[self.item_dim..].copy_from_slice(&self.cat_emb[c * self.cat_dim..(c + 1) * self.cat_dim]);
    }

    fn embed_positions(&self, seq: &BehaviorSequence, positions: impl Iterator<Item = usize>, n: usize) -> Vec<f32> {
        let d = self.dim();
        let mut rows = vec![0.0; n * d];
        for (r, p) in positions.enumerate() {
            self.embed_into(seq.items()[p], seq.categories()[p], &mut rows[r * d..(r + 1) * d]);
        }
        rows
    }

    fn distribution(&self, head: &Head32, window: &[f32], mask: &[bool]) -> Vec<f32> {
        let d = self.dim();
        let kv = head.attention.key_values(window, d, mask.to_vec());
        let mut pair = vec![0.0; 2 * self.head_dim];
        let (first, second) = pair.split_at_mut(self.head_dim);
        head.attention.attend(&head.attention.query(&window[..d]), &kv, first);
        head.attention.attend(&head.attention.query(&head.query), &kv, second);
        let mut hidden = vec![0.0; self.head_dim];
        project_into(&head.merge, &pair, self.head_dim, &mut hidden);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        mlp_forward(&head.mlp, &hidden, &mut a, &mut b);
        let max = a.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in a.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        a.iter_mut().for_each(|v| *v *= inv);
        a
    }

    pub fn user_state(&self, seq: &BehaviorSequence) -> Result<UserState> {
        self.user_state_timed(seq, &mut StageTimes::default())
    }

    /// Per-request work, accumulating generation and retrieval time.
    pub fn user_state_timed(&self, seq: &BehaviorSequence, times: &mut StageTimes) -> Result<UserState> {
        let d = self.dim();
        let l = self.short_len;
        let n_win = seq.valid().min(l);
        if n_win == 0 {
            return Err(GenliError::data("user has no behaviors"));
        }
        let t0 = std::time::Instant::now();
        let window = self.embed_positions(seq, 0..n_win, l);
        let mut mask = vec![false; l];
        mask[..n_win].iter_mut().for_each(|m| *m = true);
        let short = self.short.key_values(&window, d, mask.clone());

        let mut distributions: [Option<Vec<f32>>; 3] = Default::default();
        let mut selections: [Option<Selection<f32>>; 3] = Default::default();
        let mut long: [Option<KeyValues>; 3] = Default::default();
        let mut long_pool = Vec::new();
        match self.variant {
            Variant::Genli { .. } => {
                distributions[0] = self.heads[0].as_ref().map(|h| self.distribution(h, &window, &mask));
                distributions[1] = self.heads[1].as_ref().map(|h| self.distribution(h, &window, &mask));
                if self.variant.uses(Kind::Relative) {
                    let uniform = 1.0 / self.buckets as f32;
                    let mut r: Vec<f32> = (0..self.buckets)
                        .map(|j| {
                            let e = distributions[1].as_ref().map_or(uniform, |p| p[j]);
                            let i = distributions[0].as_ref().map_or(uniform, |p| p[j]);
                            e - i
                        })
                        .collect();
                    let max = r.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let mut sum = 0.0;
                    for v in r.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    r.iter_mut().for_each(|v| *v /= sum);
                    distributions[2] = Some(r);
                }
                let t1 = std::time::Instant::now();
                times.generation_ns += (t1 - t0).as_nanos();
                for slot in 0..3 {
                    if self.long[slot].is_some() {
                        if let Some(p) = &distributions[slot] {
                            selections[slot] =
                                Some(topk_by_lookup(seq.items(), seq.valid(), p, &self.bucketer, self.k));
                        }
                    }
                }
                let t2 = std::time::Instant::now();
                times.retrieval_ns += (t2 - t1).as_nanos();
                for slot in 0..3 {
                    let (Some(att), Some(sel)) = (&self.long[slot], &selections[slot]) else { continue };
                    let mut pos = sel.positions.clone();
                    pos.sort_unstable();
                    let rows = self.embed_positions(seq, pos.iter().copied(), self.k);
                    let mut m = vec![false; self.k];
                    m[..pos.len()].iter_mut().for_each(|v| *v = true);
                    if pos.is_empty() {
                        m[0] = true;
                    }
                    long[slot] = Some(att.key_values(&rows, d, m));
                }
                times.fusion_ns += t2.elapsed().as_nanos();
            }
            _ => {
                let rows = self.embed_positions(seq, 0..seq.valid(), seq.valid());
                long_pool = crate::baselines::avg_pool_feature(&rows, d, &vec![true; seq.valid()])?;
                times.generation_ns += t0.elapsed().as_nanos();
            }
        }
        Ok(UserState { distributions, selections, long, short, long_pool })
    }

    /// Click probability of one candidate.
    pub fn score(&self, state: &UserState, item: u32, category: u32) -> f32 {
        let d = self.dim();
        let dh = self.head_dim;
        let mut target = vec![0.0; d];
        self.embed_into(item, category, &mut target);
        let mut features = Vec::with_capacity(3 * dh + d);
        if self.variant.is_genli() {
            let mut z = vec![0.0; 3 * dh];
            for slot in 0..3 {
                if let (Some(att), Some(kv)) = (&self.long[slot], &state.long[slot]) {
                    att.attend(&att.query(&target), kv, &mut z[slot * dh..(slot + 1) * dh]);
                }
            }
            let (mut a, mut b) = (Vec::new(), Vec::new());
            mlp_forward(&self.gate, &z, &mut a, &mut b);
            for (g, v) in a.iter_mut().zip(&z) {
                *g *= v;
            }
            let mut x = vec![0.0; dh];
            project_into(&self.projection, &a, dh, &mut x);
            features.extend_from_slice(&x);
        } else {
            features.extend_from_slice(&state.long_pool);
        }
        let mut xs = vec![0.0; dh];
        self.short.attend(&self.short.query(&target), &state.short, &mut xs);
        features.extend_from_slice(&xs);
        features.extend_from_slice(&target);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        mlp_forward(&self.ctr, &features, &mut a, &mut b);
        sigmoid32(a[0])
    }
}

/// Target-attention retrieval over the whole sequence followed by the same
/// attention on the selected behaviors, as in two-stage models whose search
/// unit shares the exact unit's attention. Key and value projections of
/// every behavior are cached per user; each candidate scores all of them.
#[derive(Clone, Debug)]
pub struct TwinEngine {
    base: Engine,
    attention: Mha32,
    pub k: usize,
}

/// Per-user cache of the target-attention path.
pub struct TwinState {
    all: KeyValues,
    short: KeyValues,
}

impl TwinEngine {
    /// Reuses the embedding tables, short-term attention and CTR head of a
    /// GenLI model; the retrieval attention takes the explicit fusion
    /// attention's weights. `k` is the number of retrieved behaviors.
    pub fn new(model: &Model, store: &ParameterStore, k: usize) -> Result<Self> {
        let base = Engine::new(model, store)?;
        let att = model
            .long
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| GenliError::config("target-attention path needs a model with fusion attention"))?;
        Ok(TwinEngine { attention: Mha32::from_mha(store, &att.attention), base, k })
    }

    pub fn user_state(&self, seq: &BehaviorSequence) -> TwinState {
        let d = self.base.dim();
        let rows = self.base.embed_positions(seq, 0..seq.valid(), seq.valid());
        let all = self.attention.key_values(&rows, d, vec![true; seq.valid()]);
        let l = self.base.short_len;
        let n_win = seq.valid().min(l);
        let window = self.base.embed_positions(seq, 0..n_win, l);
        let mut mask = vec![false; l];
        mask[..n_win].iter_mut().for_each(|m| *m = true);
        TwinState { all, short: self.base.short.key_values(&window, d, mask) }
    }

    pub fn score(&self, state: &TwinState, item: u32, category: u32) -> f32 {
        let base = &self.base;
        let d = base.dim();
        let dh = base.head_dim;
        let w = self.attention.width;
        let mut target = vec![0.0; d];
        base.embed_into(item, category, &mut target);
        let q = self.attention.query(&target);
        let n = state.all.mask.len();
        let sel = crate::brm::select_topk((0..n).map(|j| (j, dot(&q, &state.all.keys[j * w..(j + 1) * w]))), self.k);
        let mut picked = KeyValues {
            keys: Vec::with_capacity(self.k * w),
            values: Vec::with_capacity(self.k * w),
            mask: vec![true; sel.positions.len().max(1)],
        };
        for &p in &sel.positions {
            picked.keys.extend_from_slice(&state.all.keys[p * w..(p + 1) * w]);
            picked.values.extend_from_slice(&state.all.values[p * w..(p + 1) * w]);
        }
        if sel.positions.is_empty() {
            picked.keys.resize(w, 0.0);
            picked.values.resize(w, 0.0);
        }
        let mut features = vec![0.0; dh];
        self.attention.attend(&q, &picked, &mut features);
        let mut xs = vec![0.0; dh];
        base.short.attend(&base.short.query(&target), &state.short, &mut xs);
        features.extend_from_slice(&xs);
        features.extend_from_slice(&target);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        mlp_forward(&base.ctr, &features, &mut a, &mut b);
        sigmoid32(a[0])
    }
}
