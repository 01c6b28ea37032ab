//! End-to-end inference latency on a batch of requests.
//!
//! A batch of `samples` impressions is split into requests of `candidates`
//! impressions that share one user. The lookup path computes distributions
//! and retrieval once per request; the target-attention path scores every
//! behavior of the sequence for each candidate.

use std::fmt::Write as _;
use std::hint::black_box;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Behavior, BehaviorSequence};
use crate::error::{GenliError, Result};
use crate::evalbench::bench::median;
use crate::evalbench::infer::{Engine, TwinEngine};
use crate::model::{Model, ModelConfig};
use crate::nn::ParameterStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    pub samples: usize,
    pub candidates: usize,
    pub seq_len: usize,
    pub items: usize,
    pub categories: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            samples: 8192,
            candidates: 32,
            seq_len: 1000,
            items: 100_000,
            categories: 1000,
            repetitions: 5,
            warmup: 1,
            seed: 5,
        }
    }
}

impl LatencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 5 {
            return Err(GenliError::config("at least 5 repetitions are required"));
        }
        if self.samples == 0 || self.candidates == 0 || self.seq_len == 0 || self.items == 0 || self.categories == 0 {
            return Err(GenliError::config("latency sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyResult {
    pub method: &'static str,
    pub samples: usize,
    pub seq_len: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

struct Request {
    sequence: Arc<BehaviorSequence>,
    targets: Vec<(u32, u32)>,
}

fn requests(cfg: &LatencyConfig) -> Vec<Request> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.samples.div_ceil(cfg.candidates);
    let cat_of = |item: u32| 1 + item % (cfg.categories as u32 - 1);
    (0..n)
        .map(|r| {
            let history: Vec<Behavior> = (0..cfg.seq_len)
                .map(|t| {
                    let item = rng.gen_range(1..cfg.items as u32);
                    Behavior::new(item, cat_of(item), t as i64)
                })
                .collect();
            let count = cfg.candidates.min(cfg.samples - r * cfg.candidates);
            let targets = (0..count)
                .map(|_| {
                    let item = rng.gen_range(1..cfg.items as u32);
                    (item, cat_of(item))
                })
                .collect();
            Request { sequence: Arc::new(BehaviorSequence::from_history(history, cfg.seq_len)), targets }
        })
        .collect()
}

fn summarize(method: &'static str, cfg: &LatencyConfig, times: Vec<f64>) -> LatencyResult {
    LatencyResult {
        method,
        samples: cfg.samples,
        seq_len: cfg.seq_len,
        repetitions: times.len(),
        median_ms: median(&times),
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().copied().fold(0.0, f64::max),
    }
}

/// Times both inference paths on the same randomly initialised GenLI model.
pub fn bench_latency(model_cfg: &ModelConfig, cfg: &LatencyConfig) -> Result<Vec<LatencyResult>> {
    if cfg.repetitions < 5 || cfg.candidates == 0 || cfg.samples == 0 || cfg.categories < 2 {
        return Err(GenliError::config("latency benchmark needs >= 5 repetitions and a non-empty batch"));
    }
    let mut store = ParameterStore::new();
    let model = Model::new(model_cfg.clone(), cfg.items, cfg.categories, cfg.seed, &mut store)?;
    let genli = Engine::new(&model, &store)?;
    let twin = TwinEngine::new(&model, &store, 3 * model_cfg.k)?;
    let reqs = requests(cfg);

    let run_genli = || -> Result<f64> {
        let t = Instant::now();
        for r in &reqs {
            let state = genli.user_state(&r.sequence)?;
            for &(i, c) in &r.targets {
                black_box(genli.score(&state, i, c));
            }
        }
        Ok(t.elapsed().as_secs_f64() * 1e3)
    };
    let run_twin = || -> f64 {
        let t = Instant::now();
        for r in &reqs {
            let state = twin.user_state(&r.sequence);
            for &(i, c) in &r.targets {
                black_box(twin.score(&state, i, c));
            }
        }
        t.elapsed().as_secs_f64() * 1e3
    };
    for _ in 0..cfg.warmup {
        run_genli()?;
        run_twin();
    }
    // interleave so drift affects both paths alike
    let mut g = Vec::new();
    let mut t = Vec::new();
    for _ in 0..cfg.repetitions {
        g.push(run_genli()?);
        t.push(run_twin());
    }
    Ok(vec![summarize("genli", cfg, g), summarize("twin_attention", cfg, t)])
}

pub fn latency_csv(results: &[LatencyResult]) -> String {
    let mut s = String::from("method,samples,L,repetitions,median_ms,min_ms,max_ms\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.3},{:.3},{:.3}",
            r.method, r.samples, r.seq_len, r.repetitions, r.median_ms, r.min_ms, r.max_ms
        );
    }
    s
}
