//! Joint training: CTR cross-entropy plus weighted auxiliary interest losses,
//! optimized with Adam over shuffled mini-batches.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{GenliError, Result};
use crate::evalbench::auc;
use crate::model::{LossWeights, Model};
use crate::nn::checkpoint::{read_tensors, write_tensors};
use crate::nn::{AdamConfig, ParameterStore, Tape, Tensor2D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the implicit (exposure) loss.
    pub alpha: f64,
    /// Weight of the explicit (click) loss.
    pub beta: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Batch size used for validation scoring.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            lr: 0.001,
            batch_size: 256,
            epochs: 5,
            seed: 42,
            shuffle: true,
            patience: 3,
            eval_batch: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GenliError::config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GenliError::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(GenliError::config("batch sizes must be at least 1"));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { implicit: self.alpha, explicit: self.beta }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub ctr: f64,
    pub implicit: f64,
    pub explicit: f64,
    pub total: f64,
    pub valid_auc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl TrainReport {
    /// Deterministic report; wall-clock lives in [`TrainReport::timings_csv`].
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss_ctr,loss_implicit,loss_explicit,loss_total,valid_auc\n");
        for e in &self.epochs {
            let auc = e.valid_auc.map(|a| format!("{a:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:.9},{:.9},{:.9},{:.9},{auc}", e.epoch, e.ctr, e.implicit, e.explicit, e.total);
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.3}", e.epoch, e.seconds);
        }
        s
    }

    pub fn total_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }
}

/// Trailing moving average with the given window.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window.max(1));
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Where and whether to write per-epoch checkpoints.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint to resume from (written by a previous run).
    pub resume: Option<PathBuf>,
}

const EPOCH_KEY: &str = "train.epoch";
const BEST_KEY: &str = "train.best_auc";
const STALE_KEY: &str = "train.stale_epochs";

/// Progress counters saved alongside the parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Progress {
    next_epoch: usize,
    best_auc: f64,
    stale: usize,
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:03}.ckpt"))
}

fn save_checkpoint(store: &ParameterStore, progress: Progress, path: &Path) -> Result<()> {
    let mut tensors = store.to_tensors();
    tensors.push((EPOCH_KEY.into(), Tensor2D::filled(1, 1, progress.next_epoch as f64)));
    tensors.push((BEST_KEY.into(), Tensor2D::filled(1, 1, progress.best_auc)));
    tensors.push((STALE_KEY.into(), Tensor2D::filled(1, 1, progress.stale as f64)));
    write_tensors(std::io::BufWriter::new(File::create(path)?), &tensors)
}

/// Loads parameters (and optimizer state) from a training or plain
/// checkpoint, returning the next epoch index when recorded.
pub fn load_checkpoint(store: &mut ParameterStore, path: &Path) -> Result<usize> {
    let progress = load_progress(store, path)?;
    Ok(progress.next_epoch)
}

fn load_progress(store: &mut ParameterStore, path: &Path) -> Result<Progress> {
    let f =
        File::open(path).map_err(|e| GenliError::data(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let mut tensors = read_tensors(BufReader::new(f))?;
    let mut progress = Progress { next_epoch: 0, best_auc: f64::NEG_INFINITY, stale: 0 };
    tensors.retain(|(name, t)| match name.as_str() {
        EPOCH_KEY => {
            progress.next_epoch = t.get(0, 0) as usize;
            false
        }
        BEST_KEY => {
            progress.best_auc = t.get(0, 0);
            false
        }
        STALE_KEY => {
            progress.stale = t.get(0, 0) as usize;
            false
        }
        _ => true,
    });
    store.load_tensors(tensors)?;
    Ok(progress)
}

/// Scores samples in batches.
pub fn predict_all(model: &Model, store: &ParameterStore, samples: &[Sample], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        out.extend(model.predict(store, &refs)?);
    }
    Ok(out)
}

fn validation_auc(model: &Model, store: &ParameterStore, valid: &Dataset, batch: usize) -> Result<f64> {
    let scores = predict_all(model, store, &valid.samples, batch)?;
    let labels: Vec<u8> = valid.samples.iter().map(|s| s.label).collect();
    auc(&scores, &labels)
}

/// One optimizer step on a batch; returns (ctr, implicit, explicit, total).
pub fn train_step(
    model: &Model,
    store: &mut ParameterStore,
    batch: &[&Sample],
    cfg: &TrainConfig,
    adam: &AdamConfig,
) -> Result<[f64; 4]> {
    let (grads, parts) = {
        let mut tape = Tape::new(store);
        let fwd = model.forward(&mut tape, batch)?;
        let parts = model.loss(&mut tape, batch, &fwd, cfg.weights())?;
        if !parts.total_value.is_finite() {
            let culprit = store.first_non_finite().unwrap_or_else(|| "loss".to_string());
            return Err(GenliError::Numerical(format!("non-finite loss; first non-finite tensor: {culprit}")));
        }
        (tape.backward(parts.total)?, parts)
    };
    store.accumulate(&grads);
    if let Some(name) = store.first_non_finite() {
        return Err(GenliError::Numerical(format!("non-finite values in {name}")));
    }
    store.adam_step(adam);
    Ok([parts.ctr, parts.implicit, parts.explicit, parts.total_value])
}

/// Deterministic batch order of one epoch.
pub fn epoch_order(n: usize, cfg: &TrainConfig, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        let seed = cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

/// Trains `model` in place. With a validation set, AUC is computed after
/// every epoch and drives early stopping.
pub fn train(
    model: &Model,
    store: &mut ParameterStore,
    data: &Dataset,
    valid: Option<&Dataset>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(GenliError::data("training dataset is empty"));
    }
    let adam = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut progress = Progress { next_epoch: 0, best_auc: f64::NEG_INFINITY, stale: 0 };
    if let Some(path) = &opts.resume {
        progress = load_progress(store, path)?;
        log::info!("resumed from {} at epoch {}", path.display(), progress.next_epoch);
    }
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut report = TrainReport::default();
    for epoch in progress.next_epoch..cfg.epochs {
        let start = Instant::now();
        let order = epoch_order(data.len(), cfg, epoch);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.samples[i]).collect();
            let parts = train_step(model, store, &batch, cfg, &adam)?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p;
            }
            batches += 1;
        }
        let mean = sums.map(|s| s / batches as f64);
        let valid_auc = match valid {
            Some(v) if !v.is_empty() => Some(validation_auc(model, store, v, cfg.eval_batch)?),
            _ => None,
        };
        let stats = EpochStats {
            epoch,
            ctr: mean[0],
            implicit: mean[1],
            explicit: mean[2],
            total: mean[3],
            valid_auc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (ctr {:.5}, implicit {:.4}, explicit {:.4}) valid auc {} in {:.1}s",
            stats.total,
            stats.ctr,
            stats.implicit,
            stats.explicit,
            valid_auc.map_or("-".into(), |a| format!("{a:.4}")),
            stats.seconds
        );
        report.epochs.push(stats);

        progress.next_epoch = epoch + 1;
        if let Some(a) = valid_auc {
            if a > progress.best_auc {
                progress.best_auc = a;
                progress.stale = 0;
            } else {
                progress.stale += 1;
            }
        }
        if let Some(dir) = &opts.checkpoint_dir {
            save_checkpoint(store, progress, &checkpoint_path(dir, epoch))?;
        }
        if cfg.patience > 0 && progress.stale >= cfg.patience {
            log::info!("no validation improvement for {} epochs, stopping", progress.stale);
            report.stopped_early = true;
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_weights_are_rejected() {
        let cfg = TrainConfig { alpha: -0.1, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(GenliError::Config(_))));
        let cfg = TrainConfig { beta: f64::NAN, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn smoothing_window() {
        assert_eq!(smoothed(&[4.0, 2.0, 3.0], 2), vec![4.0, 3.0, 2.5]);
        assert_eq!(smoothed(&[1.0, 3.0], 5), vec![1.0, 2.0]);
    }

    #[test]
    fn unshuffled_order_is_identity() {
        let cfg = TrainConfig { shuffle: false, ..TrainConfig::default() };
        assert_eq!(epoch_order(5, &cfg, 3), vec![0, 1, 2, 3, 4]);
        let cfg = TrainConfig::default();
        assert_eq!(epoch_order(50, &cfg, 1), epoch_order(50, &cfg, 1));
        assert_ne!(epoch_order(50, &cfg, 1), epoch_order(50, &cfg, 2));
    }
}
