//! Interest generation from the short-term window.
//!
//! Each head attends over the window with a two-row query made of the most
//! recent behavior and a learned query vector, merges the two output rows
//! into one hidden vector, and maps it through an MLP and a softmax to a
//! distribution over `N` buckets. The relative distribution is the softmax of
//! the explicit minus the implicit probabilities and has no parameters.

use rand::Rng;

use crate::error::{GenliError, Result};
use crate::nn::layers::uniform;
use crate::nn::{Activation, Mha, MhaConfig, Mlp, ParamId, ParameterStore, Tape, Tensor2D, Var};

/// Floor applied inside the auxiliary log-likelihoods.
pub use crate::nn::tape::LOG_FLOOR;

#[derive(Clone, Debug)]
pub struct InterestHead {
    pub query: ParamId,
    pub attention: Mha,
    pub merge: ParamId,
    pub mlp: Mlp,
    pub buckets: usize,
}

impl InterestHead {
    /// `hidden` lists the MLP's hidden widths; the output width is `buckets`.
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        cfg: MhaConfig,
        hidden: &[usize],
        buckets: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if buckets == 0 {
            return Err(GenliError::config("distribution size must be positive"));
        }
        let d = cfg.input_dim;
        let query = store.add(&format!("{name}.query"), uniform(rng, 1, d, 1.0 / (d as f64).sqrt()))?;
        let attention = Mha::new(store, &format!("{name}.attention"), cfg, rng)?;
        let h2 = 2 * cfg.head_dim;
        let merge = store.add(&format!("{name}.merge"), uniform(rng, h2, cfg.head_dim, 1.0 / (h2 as f64).sqrt()))?;
        let mut dims = vec![cfg.head_dim];
        dims.extend_from_slice(hidden);
        dims.push(buckets);
        let mlp = Mlp::new(store, &format!("{name}.mlp"), &dims, Activation::PRelu, Activation::None, rng)?;
        Ok(InterestHead { query, attention, merge, mlp, buckets })
    }

    /// Hidden interest vectors, one row per group. `window` holds
    /// `groups * len` behavior rows (newest first within each group).
    pub fn hidden(&self, tape: &mut Tape, window: Var, mask: &[bool], groups: usize, len: usize) -> Result<Var> {
        for g in 0..groups {
            if !mask[g * len..(g + 1) * len].iter().any(|&m| m) {
                return Err(GenliError::data(format!("user has no behaviors (batch row {g})")));
            }
        }
        let q = tape.param(self.query);
        let stacked = tape.concat_rows(&[window, q])?;
        let qrow = groups * len;
        let idx: Vec<usize> = (0..groups).flat_map(|g| [g * len, qrow]).collect();
        let queries = tape.select_rows(stacked, idx)?;
        let out = self.attention.forward(tape, queries, window, window, groups, 2, len, mask.to_vec())?;
        let pairs = tape.reshape(out, groups, 2 * self.attention.cfg.head_dim)?;
        let merge = tape.param(self.merge);
        tape.matmul(pairs, merge)
    }

    pub fn distribution(&self, tape: &mut Tape, hidden: Var) -> Result<Var> {
        let logits = self.mlp.forward(tape, hidden)?;
        tape.softmax_rows(logits)
    }

    pub fn forward(&self, tape: &mut Tape, window: Var, mask: &[bool], groups: usize, len: usize) -> Result<Var> {
        let h = self.hidden(tape, window, mask, groups, len)?;
        self.distribution(tape, h)
    }
}

/// `softmax(explicit - implicit)` on the tape.
pub fn relative_on_tape(tape: &mut Tape, explicit: Var, implicit: Var) -> Result<Var> {
    let diff = tape.sub(explicit, implicit)?;
    tape.softmax_rows(diff)
}

/// Uniform distributions standing in for a removed head.
pub fn uniform_rows(tape: &mut Tape, rows: usize, buckets: usize) -> Var {
    tape.input(Tensor2D::filled(rows, buckets, 1.0 / buckets as f64))
}

/// Softmax of the elementwise difference of two probability vectors.
pub fn relative_distribution(explicit: &[f64], implicit: &[f64]) -> Result<Vec<f64>> {
    if explicit.len() != implicit.len() || explicit.is_empty() {
        return Err(GenliError::config(format!("distribution sizes differ: {} vs {}", explicit.len(), implicit.len())));
    }
    let mut out: Vec<f64> = explicit.iter().zip(implicit).map(|(e, i)| e - i).collect();
    crate::nn::tape::softmax_in_place(&mut out);
    Ok(out)
}

fn nll(p: &[f64], item: u32) -> f64 {
    -crate::brm::lookup_score(item, p).max(LOG_FLOOR).ln()
}

/// Click-driven loss for one sample: `-ln s(target)` when clicked, else 0.
pub fn explicit_loss(explicit: &[f64], target_item: u32, label: u8) -> f64 {
    if label == 1 {
        nll(explicit, target_item)
    } else {
        0.0
    }
}

/// Exposure-driven loss for one sample.
pub fn implicit_loss(implicit: &[f64], exposed_item: u32) -> f64 {
    nll(implicit, exposed_item)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_closed_form() {
        let r = relative_distribution(&[0.8, 0.2], &[0.2, 0.8]).unwrap();
        assert!((r[0] - 0.76852).abs() < 1e-5 && (r[1] - 0.23148).abs() < 1e-5);
        let s = relative_distribution(&[0.2, 0.8], &[0.8, 0.2]).unwrap();
        assert!(s[0] < s[1]);
        let same = relative_distribution(&[0.1, 0.6, 0.3], &[0.1, 0.6, 0.3]).unwrap();
        assert!(same.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(relative_distribution(&[0.5, 0.5], &[1.0]).is_err());
    }

    #[test]
    fn auxiliary_losses_closed_forms() {
        let n = 4096;
        let u = vec![1.0 / n as f64; n];
        assert_eq!(explicit_loss(&u, 17, 0), 0.0);
        assert!((explicit_loss(&u, 17, 1) - 8.317766166719343).abs() < 1e-12);
        assert!((implicit_loss(&u, 17) - (n as f64).ln()).abs() < 1e-12);
        let mut p = vec![0.5 / (n - 1) as f64; n];
        p[17] = 0.5;
        assert!((explicit_loss(&p, 17, 1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(implicit_loss(&p, 3), implicit_loss(&p, 3 + n as u32));
    }
}
