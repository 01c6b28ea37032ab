use std::collections::BTreeMap;

use crate::error::{GenliError, Result};
use crate::nn::tensor::Tensor2D;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Dense,
    /// Embedding table: row 0 is the frozen all-zero padding row and only rows
    /// touched by the current batch receive updates.
    Embedding,
}

#[derive(Clone, Debug)]
pub(crate) struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor2D,
    pub grad: Tensor2D,
    pub m: Tensor2D,
    pub v: Tensor2D,
    pub touched: Vec<bool>,
}

/// Adam hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Gradient contributions collected by one backward pass, indexed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) dense: Vec<Option<Tensor2D>>,
    pub(crate) touched: Vec<Vec<usize>>,
}

impl Gradients {
    pub(crate) fn new(n: usize) -> Self {
        Gradients { dense: vec![None; n], touched: vec![Vec::new(); n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor2D> {
        self.dense.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn slot(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Tensor2D {
        self.dense[id.0].get_or_insert_with(|| Tensor2D::zeros(rows, cols))
    }
}

/// Every trainable tensor together with its gradient slot and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
    index: BTreeMap<String, ParamId>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor2D) -> Result<ParamId> {
        self.insert(name, value, ParamKind::Dense)
    }

    /// Registers an embedding table; row 0 is forced to zero.
    pub fn add_embedding(&mut self, name: &str, mut value: Tensor2D) -> Result<ParamId> {
        if value.rows() == 0 {
            return Err(GenliError::config(format!("embedding table {name} has no rows")));
        }
        value.row_mut(0).fill(0.0);
        self.insert(name, value, ParamKind::Embedding)
    }

    fn insert(&mut self, name: &str, value: Tensor2D, kind: ParamKind) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(GenliError::config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.to_string(),
            kind,
            grad: Tensor2D::zeros(r, c),
            m: Tensor2D::zeros(r, c),
            v: Tensor2D::zeros(r, c),
            touched: if kind == ParamKind::Embedding { vec![false; r] } else { Vec::new() },
            value,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.params[id.0].kind
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Tensor2D {
        &self.params[id.0].value
    }

    /// Mutable access for tests and initialisation. Padding rows of embedding
    /// tables are re-zeroed on the next optimizer step.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2D {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2D {
        &self.params[id.0].grad
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    pub(crate) fn params(&self) -> &[Param] {
        &self.params
    }

    pub(crate) fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Adds a backward pass's contributions into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, (g, touched)) in self.params.iter_mut().zip(grads.dense.iter().zip(&grads.touched)) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
            for &r in touched {
                p.touched[r] = true;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
            p.touched.iter_mut().for_each(|t| *t = false);
        }
    }

    /// First non-finite parameter or gradient, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.params.iter().find_map(|p| {
            if !p.value.is_finite() {
                Some(p.name.clone())
            } else if !p.grad.is_finite() {
                Some(format!("grad({})", p.name))
            } else {
                None
            }
        })
    }

    /// One bias-corrected Adam update followed by zeroing all gradients.
    ///
    /// Dense parameters are updated everywhere. Embedding tables only update rows
    /// that received a gradient in this step; the padding row never moves.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let cols = p.value.cols();
            match p.kind {
                ParamKind::Dense => {
                    let n = p.value.data().len();
                    adam_range(p, 0..n, cfg, bc1, bc2);
                }
                ParamKind::Embedding => {
                    for r in 1..p.value.rows() {
                        if p.touched[r] {
                            adam_range(p, r * cols..(r + 1) * cols, cfg, bc1, bc2);
                        }
                    }
                    p.value.row_mut(0).fill(0.0);
                }
            }
        }
        self.zero_grad();
    }
}

fn adam_range(p: &mut Param, range: std::ops::Range<usize>, cfg: &AdamConfig, bc1: f64, bc2: f64) {
    let g = &p.grad.data()[range.clone()];
    let m = &mut p.m.data_mut()[range.clone()];
    for (m, &g) in m.iter_mut().zip(g) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    }
    let v = &mut p.v.data_mut()[range.clone()];
    for (v, &g) in v.iter_mut().zip(g) {
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    }
    let m = &p.m.data()[range.clone()];
    let v = &p.v.data()[range.clone()];
    let w = &mut p.value.data_mut()[range];
    for ((w, &m), &v) in w.iter_mut().zip(m).zip(v) {
        *w -= cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
    }
}
