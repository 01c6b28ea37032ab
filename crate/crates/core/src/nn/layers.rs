use rand::Rng;

use crate::error::{GenliError, Result};
use crate::nn::params::{ParamId, ParameterStore};
use crate::nn::tape::{AttnShape, Tape, Var};
use crate::nn::tensor::Tensor2D;

/// Initial PReLU slope for every layer.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    PRelu,
    Sigmoid,
}

pub(crate) fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor2D {
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor2D::from_vec(rows, cols, data).expect("sized")
}

/// Fully connected layer `act(x·W + b)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weights: ParamId,
    pub bias: ParamId,
    pub slope: Option<ParamId>,
    pub activation: Activation,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weights = store.add(&format!("{name}.w"), uniform(rng, inputs, outputs, bound))?;
        let bias = store.add(&format!("{name}.b"), Tensor2D::zeros(1, outputs))?;
        let slope = match activation {
            Activation::PRelu => Some(store.add(&format!("{name}.prelu"), Tensor2D::filled(1, 1, PRELU_INIT))?),
            _ => None,
        };
        Ok(Dense { weights, bias, slope, activation, inputs, outputs })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weights);
        let b = tape.param(self.bias);
        let z = tape.matmul(x, w)?;
        let z = tape.add_bias(z, b)?;
        match self.activation {
            Activation::None => Ok(z),
            Activation::Sigmoid => Ok(tape.sigmoid(z)),
            Activation::PRelu => {
                let a = tape.param(self.slope.expect("prelu slope"));
                tape.prelu(z, a)
            }
        }
    }
}

/// Stack of dense layers; hidden layers share one activation kind.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `dims = [input, hidden.., output]`.
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        last: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(GenliError::config(format!("mlp {name} needs at least input and output widths")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                Dense::new(store, &format!("{name}.{i}"), dims[i], dims[i + 1], act, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        for l in &self.layers {
            x = l.forward(tape, x)?;
        }
        Ok(x)
    }

    pub fn last(&self) -> &Dense {
        self.layers.last().expect("non-empty")
    }
}

/// Shape of one multi-head attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MhaConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub input_dim: usize,
}

impl MhaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 || self.input_dim == 0 {
            return Err(GenliError::config(format!("invalid attention shape {self:?}")));
        }
        Ok(())
    }
}

/// `MHA(Q,K,V) = concat(head_1..head_H)·W_o` with per-head projections stacked
/// column-wise into `W_q, W_k, W_v ∈ R^{input × H·d_h}` and `W_o ∈ R^{H·d_h × d_h}`.
#[derive(Clone, Debug)]
pub struct Mha {
    pub cfg: MhaConfig,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl Mha {
    pub fn new(store: &mut ParameterStore, name: &str, cfg: MhaConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let width = cfg.heads * cfg.head_dim;
        let b_in = 1.0 / (cfg.input_dim as f64).sqrt();
        let b_out = 1.0 / (width as f64).sqrt();
        Ok(Mha {
            cfg,
            wq: store.add(&format!("{name}.wq"), uniform(rng, cfg.input_dim, width, b_in))?,
            wk: store.add(&format!("{name}.wk"), uniform(rng, cfg.input_dim, width, b_in))?,
            wv: store.add(&format!("{name}.wv"), uniform(rng, cfg.input_dim, width, b_in))?,
            wo: store.add(&format!("{name}.wo"), uniform(rng, width, cfg.head_dim, b_out))?,
        })
    }

    /// `q` has `groups*queries` rows, `k`/`v` have `groups*keys` rows.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        q: Var,
        k: Var,
        v: Var,
        groups: usize,
        queries: usize,
        keys: usize,
        mask: Vec<bool>,
    ) -> Result<Var> {
        for (what, x) in [("query", q), ("key", k), ("value", v)] {
            let c = tape.value(x).cols();
            if c != self.cfg.input_dim {
                return Err(GenliError::config(format!(
                    "attention {what} width {c} != configured input dim {}",
                    self.cfg.input_dim
                )));
            }
        }
        let (wq, wk, wv, wo) = (tape.param(self.wq), tape.param(self.wk), tape.param(self.wv), tape.param(self.wo));
        let qp = tape.matmul(q, wq)?;
        let kp = tape.matmul(k, wk)?;
        let vp = if k == v { tape.matmul(k, wv)? } else { tape.matmul(v, wv)? };
        let shape = AttnShape { groups, queries, keys, heads: self.cfg.heads };
        let heads = tape.attention(qp, kp, vp, shape, mask)?;
        tape.matmul(heads, wo)
    }
}
