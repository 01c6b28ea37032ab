//! Offline evaluation of a trained model.

use std::sync::Arc;
use std::time::Instant;

use crate::data::Dataset;
use crate::evalbench::auc::auc;
use crate::evalbench::infer::{Engine, StageTimes};
use crate::model::Model;
use crate::nn::ParameterStore;
use crate::trainer::predict_all;
use crate::Result;

/// AUC of a dataset plus the time spent in each inference stage.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub auc: f64,
    pub samples: usize,
    pub positives: usize,
    /// Requests, one per run of consecutive samples sharing a history.
    pub requests: usize,
    /// `None` when the model has no single-precision engine.
    pub stages: Option<StageTimes>,
    /// Per-candidate attention, gate and CTR head.
    pub scoring_ns: u128,
}

impl EvalReport {
    /// Deterministic part of the report.
    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nauc,{:.6}\nsamples,{}\npositives,{}\nrequests,{}\n",
            self.auc, self.samples, self.positives, self.requests
        )
    }

    /// Wall-clock stage breakdown in milliseconds.
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("stage,ms\n");
        if let Some(t) = self.stages {
            let ms = |ns: u128| ns as f64 / 1e6;
            out.push_str(&format!("generation,{:.3}\n", ms(t.generation_ns)));
            out.push_str(&format!("retrieval,{:.3}\n", ms(t.retrieval_ns)));
            out.push_str(&format!("fusion,{:.3}\n", ms(t.fusion_ns + self.scoring_ns)));
        }
        out
    }
}

/// Start index of every run of samples that share one history allocation.
fn request_starts(data: &Dataset) -> Vec<usize> {
    let mut starts = Vec::new();
    for (i, s) in data.samples.iter().enumerate() {
        if i == 0 || !Arc::ptr_eq(&s.sequence, &data.samples[i - 1].sequence) {
            starts.push(i);
        }
    }
    starts
}

/// Scores `data` with the double-precision model for the AUC and replays it
/// through the single-precision engine, one request per user, for timings.
pub fn eval_model(model: &Model, store: &ParameterStore, data: &Dataset, batch: usize) -> Result<EvalReport> {
    let scores = predict_all(model, store, &data.samples, batch)?;
    let labels: Vec<u8> = data.samples.iter().map(|s| s.label).collect();
    let value = auc(&scores, &labels)?;
    let starts = request_starts(data);

    let (stages, scoring_ns) = match Engine::new(model, store) {
        Ok(engine) => {
            let mut times = StageTimes::default();
            let mut scoring = 0u128;
            let mut sink = 0.0f32;
            for (r, &start) in starts.iter().enumerate() {
                let end = starts.get(r + 1).copied().unwrap_or(data.samples.len());
                let state = engine.user_state_timed(&data.samples[start].sequence, &mut times)?;
                let t = Instant::now();
                for s in &data.samples[start..end] {
                    sink += engine.score(&state, s.target_item, s.target_category);
                }
                scoring += t.elapsed().as_nanos();
            }
            std::hint::black_box(sink);
            (Some(times), scoring)
        }
        Err(_) => (None, 0),
    };

    Ok(EvalReport {
        auc: value,
        samples: data.samples.len(),
        positives: labels.iter().filter(|&&l| l == 1).count(),
        requests: starts.len(),
        stages,
        scoring_ns,
    })
}
