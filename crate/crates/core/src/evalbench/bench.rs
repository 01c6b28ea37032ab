//! Per-behavior scoring benchmarks across sequence lengths and widths.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{collisions, dot, Method, SdimHasher, SimHash};
use crate::brm::{select_topk, Bucketer};
use crate::error::{GenliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub lengths: Vec<usize>,
    pub widths: Vec<usize>,
    /// Signature bits for the hashing methods.
    pub bits: usize,
    pub rounds: usize,
    pub buckets: usize,
    pub k: usize,
    pub repetitions: usize,
    pub warmup: usize,
    /// Minimum duration of one timed repetition; inner loops grow until met.
    pub min_rep_ns: u64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            methods: Method::ALL.to_vec(),
            lengths: vec![1000, 2000, 4000, 8000, 16000, 32000, 64000],
            widths: vec![8, 16, 32, 64, 128],
            bits: 64,
            rounds: 4,
            buckets: 4096,
            k: 20,
            repetitions: 7,
            warmup: 2,
            min_rep_ns: 2_000_000,
            seed: 11,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 5 {
            return Err(GenliError::config("at least 5 repetitions are required"));
        }
        if self.lengths.contains(&0) || self.widths.contains(&0) {
            return Err(GenliError::config("lengths and widths must be positive"));
        }
        if self.methods.is_empty() || self.lengths.is_empty() || self.widths.is_empty() {
            return Err(GenliError::config("empty benchmark grid"));
        }
        Bucketer::new(self.buckets)?;
        Ok(())
    }
}

/// Timing summary of one (method, L, width) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub method: Method,
    pub length: usize,
    pub width: usize,
    pub bits: usize,
    pub repetitions: usize,
    pub inner_loops: usize,
    /// Scoring only, per behavior.
    pub median_ns: f64,
    pub mean_ns: f64,
    pub p99_ns: f64,
    /// Scoring plus top-k selection for one whole sequence, median.
    pub total_ms: f64,
}

/// Pre-generated inputs for one cell; nothing here is timed.
struct Inputs {
    ids: Vec<u32>,
    cats: Vec<u32>,
    emb: Vec<f32>,
    target: Vec<f32>,
    target_cat: u32,
    probs: Vec<f32>,
    sigs: Vec<u64>,
    target_sig: u64,
    codes: Vec<u64>,
    target_codes: Vec<u64>,
}

fn inputs(cfg: &BenchConfig, len: usize, width: usize, rng: &mut ChaCha8Rng) -> Result<Inputs> {
    let emb: Vec<f32> = (0..len * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target: Vec<f32> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let raw: Vec<f32> = (0..cfg.buckets).map(|_| rng.gen_range(0.0..1.0)).collect();
    let sum: f32 = raw.iter().sum();
    let hash = SimHash::new(width, cfg.bits, cfg.seed)?;
    let sdim = SdimHasher::new(width, cfg.rounds, 3, cfg.seed)?;
    let mut codes = Vec::with_capacity(len * cfg.rounds);
    for r in 0..len {
        codes.extend(sdim.codes(&emb[r * width..(r + 1) * width]));
    }
    Ok(Inputs {
        ids: (0..len).map(|_| rng.gen_range(1..1_000_000)).collect(),
        cats: (0..len).map(|_| rng.gen_range(1..500)).collect(),
        sigs: (0..len).map(|r| hash.signature(&emb[r * width..(r + 1) * width])).collect(),
        target_sig: hash.signature(&target),
        target_codes: sdim.codes(&target),
        codes,
        emb,
        target,
        target_cat: 7,
        probs: raw.iter().map(|v| v / sum).collect(),
    })
}

/// Scores every behavior of one sequence into `out`.
fn score_all(method: Method, x: &Inputs, width: usize, rounds: usize, bucketer: &Bucketer, bits: u32, out: &mut [f32]) {
    match method {
        Method::GenliLookup => {
            for (o, &id) in out.iter_mut().zip(&x.ids) {
                *o = bucketer.lookup(id, &x.probs);
            }
        }
        Method::SimHard => {
            for (o, &c) in out.iter_mut().zip(&x.cats) {
                *o = f32::from(u8::from(c == x.target_cat));
            }
        }
        Method::SimSoft | Method::TwinAttention => {
            // the attention form scores cached key projections with a
            // pre-scaled query, so per behavior it is the same dot product
            for (o, row) in out.iter_mut().zip(x.emb.chunks_exact(width)) {
                *o = dot(row, &x.target);
            }
        }
        Method::EtaSimhash => {
            for (o, &s) in out.iter_mut().zip(&x.sigs) {
                *o = (bits - (s ^ x.target_sig).count_ones()) as f32;
            }
        }
        Method::SdimCollision => {
            for (o, c) in out.iter_mut().zip(x.codes.chunks_exact(rounds)) {
                *o = collisions(c, &x.target_codes) as f32;
            }
        }
        Method::AvgPool => {
            let mut acc = vec![0.0f32; width];
            for row in x.emb.chunks_exact(width) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            out[0] = acc.iter().sum();
        }
    }
}

/// Runs `f` `inner` times per repetition and returns per-repetition seconds,
/// growing `inner` until one repetition takes at least `min_ns`.
fn time_reps(cfg: &BenchConfig, mut f: impl FnMut()) -> (Vec<f64>, usize) {
    let mut inner = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..inner {
            f();
        }
        if t.elapsed().as_nanos() as u64 >= cfg.min_rep_ns || inner >= 1 << 30 {
            break;
        }
        inner *= 2;
    }
    for _ in 0..cfg.warmup {
        for _ in 0..inner {
            f();
        }
    }
    let reps = (0..cfg.repetitions)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..inner {
                f();
            }
            t.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    (reps, inner)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((v.len() as f64 - 1.0) * q).ceil() as usize;
    v[idx.min(v.len() - 1)]
}

pub fn bench_cell(cfg: &BenchConfig, method: Method, len: usize, width: usize) -> Result<BenchResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (len as u64) << 8 ^ width as u64);
    let x = inputs(cfg, len, width, &mut rng)?;
    let bucketer = Bucketer::new(cfg.buckets)?;
    let bits = cfg.bits as u32;
    let mut scores = vec![0.0f32; len];
    let (reps, inner) = time_reps(cfg, || {
        score_all(method, black_box(&x), width, cfg.rounds, &bucketer, bits, &mut scores);
        black_box(&scores);
    });
    let per: Vec<f64> = reps.iter().map(|s| s * 1e9 / len as f64).collect();
    let (totals, _) = time_reps(cfg, || {
        score_all(method, black_box(&x), width, cfg.rounds, &bucketer, bits, &mut scores);
        if method != Method::AvgPool {
            black_box(select_topk(scores.iter().copied().enumerate(), cfg.k));
        }
    });
    Ok(BenchResult {
        method,
        length: len,
        width,
        bits: cfg.bits,
        repetitions: cfg.repetitions,
        inner_loops: inner,
        median_ns: median(&per),
        mean_ns: per.iter().sum::<f64>() / per.len() as f64,
        p99_ns: percentile(&per, 0.99),
        total_ms: median(&totals) * 1e3,
    })
}

/// Every (method, L, width) cell of the grid.
pub fn bench_scoring(cfg: &BenchConfig) -> Result<Vec<BenchResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &len in &cfg.lengths {
            for &width in &cfg.widths {
                out.push(bench_cell(cfg, method, len, width)?);
            }
        }
    }
    Ok(out)
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return if syy == 0.0 { 1.0 } else { 0.0 };
    }
    sxy * sxy / (sxx * syy)
}

/// `method,L,d_h,ns_per_behavior,total_ms` rows (median scoring time).
pub fn results_csv(results: &[BenchResult]) -> String {
    let mut s = String::from("method,L,d_h,ns_per_behavior,total_ms\n");
    for r in results {
        let _ = writeln!(s, "{},{},{},{:.4},{:.6}", r.method.name(), r.length, r.width, r.median_ns, r.total_ms);
    }
    s
}

/// Full dispersion table.
pub fn detail_csv(results: &[BenchResult]) -> String {
    let mut s = String::from("method,L,d_h,m,repetitions,inner_loops,median_ns,mean_ns,p99_ns,total_ms\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.6}",
            r.method.name(),
            r.length,
            r.width,
            r.bits,
            r.repetitions,
            r.inner_loops,
            r.median_ns,
            r.mean_ns,
            r.p99_ns,
            r.total_ms
        );
    }
    s
}

/// R² of total retrieval time against L for one method at one width.
pub fn length_fit(results: &[BenchResult], method: Method, width: usize) -> Option<f64> {
    let cells: Vec<&BenchResult> = results.iter().filter(|r| r.method == method && r.width == width).collect();
    if cells.len() < 3 {
        return None;
    }
    let x: Vec<f64> = cells.iter().map(|r| r.length as f64).collect();
    let y: Vec<f64> = cells.iter().map(|r| r.total_ms).collect();
    Some(linear_r2(&x, &y))
}

/// Ratio of per-behavior time at the widest over the narrowest width.
pub fn width_ratio(results: &[BenchResult], method: Method, len: usize) -> Option<f64> {
    let cells: Vec<&BenchResult> = results.iter().filter(|r| r.method == method && r.length == len).collect();
    let lo = cells.iter().min_by_key(|r| r.width)?;
    let hi = cells.iter().max_by_key(|r| r.width)?;
    Some(hi.median_ns / lo.median_ns)
}

/// Median over all lengths of [`width_ratio`]; single cells of a memory-bound
/// kernel vary by tens of percent with allocation placement.
pub fn pooled_width_ratio(results: &[BenchResult], method: Method) -> Option<f64> {
    let mut lengths: Vec<usize> = results.iter().filter(|r| r.method == method).map(|r| r.length).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let ratios: Vec<f64> = lengths.iter().filter_map(|&l| width_ratio(results, method, l)).collect();
    (!ratios.is_empty()).then(|| median(&ratios))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_of_exact_line_is_one() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        assert!((linear_r2(&x, &y) - 1.0).abs() < 1e-12);
        assert!(linear_r2(&x, &[1.0, -1.0, 1.0, -1.0]) < 0.5);
    }

    #[test]
    fn pooled_ratio_takes_the_median_length() {
        let cell = |length, width, ns| BenchResult {
            method: Method::GenliLookup,
            length,
            width,
            bits: 64,
            repetitions: 5,
            inner_loops: 1,
            median_ns: ns,
            mean_ns: ns,
            p99_ns: ns,
            total_ms: 0.0,
        };
        let r = [
            cell(10, 8, 1.0),
            cell(10, 64, 3.0),
            cell(20, 8, 1.0),
            cell(20, 64, 1.0),
            cell(30, 8, 2.0),
            cell(30, 64, 2.2),
        ];
        assert!((pooled_width_ratio(&r, Method::GenliLookup).unwrap() - 1.1).abs() < 1e-12);
        assert_eq!(pooled_width_ratio(&r, Method::SimSoft), None);
    }

    #[test]
    fn median_and_percentile() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 0.99), 3.0);
    }
}
