//! Tape-free entry points for single forward computations.

use crate::error::{GenliError, Result};
use crate::nn::layers::{Activation, MhaConfig};
use crate::nn::params::ParameterStore;
use crate::nn::tape::{AttnShape, Tape};
use crate::nn::tensor::Tensor2D;

/// `activation(input·weights + bias)`; `prelu_slope` is used only for PReLU.
pub fn dense_forward(
    input: &Tensor2D,
    weights: &Tensor2D,
    bias: &Tensor2D,
    activation: Activation,
    prelu_slope: f64,
) -> Result<Tensor2D> {
    let store = ParameterStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.input(input.clone());
    let w = tape.input(weights.clone());
    let b = tape.input(bias.clone());
    let z = tape.matmul(x, w)?;
    let z = tape.add_bias(z, b)?;
    let out = match activation {
        Activation::None => z,
        Activation::Sigmoid => tape.sigmoid(z),
        Activation::PRelu => {
            let a = tape.input(Tensor2D::filled(1, 1, prelu_slope));
            tape.prelu(z, a)?
        }
    };
    Ok(tape.value(out).clone())
}

pub fn softmax_row(logits: &Tensor2D) -> Result<Tensor2D> {
    let store = ParameterStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.input(logits.clone());
    let y = tape.softmax_rows(x)?;
    Ok(tape.value(y).clone())
}

/// Explicit projection matrices for [`mha_forward`].
#[derive(Clone, Debug)]
pub struct MhaWeights {
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
}

/// Unmasked multi-head attention of every query row over all key rows.
pub fn mha_forward(q: &Tensor2D, k: &Tensor2D, v: &Tensor2D, cfg: MhaConfig, w: &MhaWeights) -> Result<Tensor2D> {
    cfg.validate()?;
    if k.rows() != v.rows() {
        return Err(GenliError::config(format!("{} keys but {} values", k.rows(), v.rows())));
    }
    for t in [q, k, v] {
        if t.cols() != cfg.input_dim {
            return Err(GenliError::config(format!("input width {} != {}", t.cols(), cfg.input_dim)));
        }
    }
    let width = cfg.heads * cfg.head_dim;
    if w.wq.shape() != (cfg.input_dim, width)
        || w.wk.shape() != (cfg.input_dim, width)
        || w.wv.shape() != (cfg.input_dim, width)
        || w.wo.shape() != (width, cfg.head_dim)
    {
        return Err(GenliError::config("attention projection shapes do not match config"));
    }
    let store = ParameterStore::new();
    let mut tape = Tape::new(&store);
    let (qv, kv, vv) = (tape.input(q.clone()), tape.input(k.clone()), tape.input(v.clone()));
    let (wq, wk, wv, wo) =
        (tape.input(w.wq.clone()), tape.input(w.wk.clone()), tape.input(w.wv.clone()), tape.input(w.wo.clone()));
    let qp = tape.matmul(qv, wq)?;
    let kp = tape.matmul(kv, wk)?;
    let vp = tape.matmul(vv, wv)?;
    let shape = AttnShape { groups: 1, queries: q.rows(), keys: k.rows(), heads: cfg.heads };
    let h = tape.attention(qp, kp, vp, shape, vec![true; k.rows()])?;
    let out = tape.matmul(h, wo)?;
    Ok(tape.value(out).clone())
}
