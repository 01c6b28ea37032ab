//! Interest fusion: target attention over each kind's retrieved behaviors, a
//! sigmoid gate over the concatenated interest embeddings, and the CTR head.

use rand::Rng;

use crate::error::Result;
use crate::nn::layers::uniform;
use crate::nn::{Activation, Mha, MhaConfig, Mlp, ParamId, ParameterStore, Tape, Var};

/// Single-query attention with the target embedding as query.
#[derive(Clone, Debug)]
pub struct TargetAttention {
    pub attention: Mha,
}

impl TargetAttention {
    pub fn new(store: &mut ParameterStore, name: &str, cfg: MhaConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(TargetAttention { attention: Mha::new(store, name, cfg, rng)? })
    }

    /// `target` has one row per group; `behaviors` has `groups * keys` rows.
    pub fn forward(
        &self,
        tape: &mut Tape,
        target: Var,
        behaviors: Var,
        mask: Vec<bool>,
        groups: usize,
        keys: usize,
    ) -> Result<Var> {
        self.attention.forward(tape, target, behaviors, behaviors, groups, 1, keys, mask)
    }

    pub fn out_dim(&self) -> usize {
        self.attention.cfg.head_dim
    }
}

/// `x = (g ⊗ z)·W` with `g = σ(MLP(z))`.
#[derive(Clone, Debug)]
pub struct GatedFusion {
    pub gate: Mlp,
    pub projection: ParamId,
}

/// Tape handles of one fusion pass.
#[derive(Clone, Copy, Debug)]
pub struct Fused {
    pub gate: Var,
    pub output: Var,
}

impl GatedFusion {
    /// `width` is the concatenated interest width, `out` the fused width.
    pub fn new(store: &mut ParameterStore, name: &str, width: usize, out: usize, rng: &mut impl Rng) -> Result<Self> {
        let gate = Mlp::new(
            store,
            &format!("{name}.gate"),
            &[width, width, width],
            Activation::PRelu,
            Activation::Sigmoid,
            rng,
        )?;
        let projection =
            store.add(&format!("{name}.projection"), uniform(rng, width, out, 1.0 / (width as f64).sqrt()))?;
        Ok(GatedFusion { gate, projection })
    }

    pub fn forward(&self, tape: &mut Tape, interests: Var) -> Result<Fused> {
        let gate = self.gate.forward(tape, interests)?;
        let gated = tape.mul(gate, interests)?;
        let w = tape.param(self.projection);
        let output = tape.matmul(gated, w)?;
        Ok(Fused { gate, output })
    }
}

/// MLP producing the click logit.
#[derive(Clone, Debug)]
pub struct CtrHead {
    pub mlp: Mlp,
}

impl CtrHead {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(CtrHead { mlp: Mlp::new(store, name, &dims, Activation::PRelu, Activation::None, rng)? })
    }

    /// Click logits, one row per sample.
    pub fn logits(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        self.mlp.forward(tape, features)
    }
}
