//! Reference scoring kernels for long-term behavior retrieval.
//!
//! Each kernel scores one behavior against one target. The float kernels
//! work on `f32` slices since they back the latency benchmarks; selection
//! reuses the shared top-k with the recency tie rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::brm::{select_topk, Score, Selection};
use crate::error::{GenliError, Result};

/// Scoring method names as they appear in benchmark tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    AvgPool,
    SimHard,
    SimSoft,
    EtaSimhash,
    SdimCollision,
    TwinAttention,
    GenliLookup,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::AvgPool,
        Method::SimHard,
        Method::SimSoft,
        Method::EtaSimhash,
        Method::SdimCollision,
        Method::TwinAttention,
        Method::GenliLookup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::AvgPool => "avg_pool",
            Method::SimHard => "sim_hard",
            Method::SimSoft => "sim_soft",
            Method::EtaSimhash => "eta_simhash",
            Method::SdimCollision => "sdim_collision",
            Method::TwinAttention => "twin_attention",
            Method::GenliLookup => "genli_lookup",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GenliError::config(format!("unknown scoring method '{s}'")))
    }
}

impl TryFrom<String> for Method {
    type Error = GenliError;
    fn try_from(s: String) -> Result<Self> {
        Method::parse(&s)
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_owned()
    }
}

#[inline(always)]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    // four accumulators so the loop vectorizes
    let mut acc = [0.0f32; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// SIM-soft: inner product of behavior and target embeddings.
pub fn score_inner_product(behavior: &[f32], target: &[f32]) -> Result<f32> {
    if behavior.len() != target.len() {
        return Err(GenliError::config(format!("widths differ: {} vs {}", behavior.len(), target.len())));
    }
    Ok(dot(behavior, target))
}

/// SIM-hard: 1 when categories match.
#[inline(always)]
pub fn score_category_match(behavior_category: u32, target_category: u32) -> u32 {
    u32::from(behavior_category == target_category)
}

/// Random-hyperplane signatures of up to 64 bits.
#[derive(Clone, Debug)]
pub struct SimHash {
    pub bits: usize,
    pub dim: usize,
    planes: Vec<f32>,
}

impl SimHash {
    pub fn new(dim: usize, bits: usize, seed: u64) -> Result<Self> {
        if bits == 0 || bits > 64 || dim == 0 {
            return Err(GenliError::config(format!("simhash needs 1..=64 bits and a positive width, got {bits}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = (0..bits * dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Ok(SimHash { bits, dim, planes })
    }

    pub fn signature(&self, e: &[f32]) -> u64 {
        let mut sig = 0u64;
        for b in 0..self.bits {
            if dot(&self.planes[b * self.dim..(b + 1) * self.dim], e) >= 0.0 {
                sig |= 1 << b;
            }
        }
        sig
    }

    /// `m - hamming(a, b)`.
    #[inline(always)]
    pub fn score(&self, a: u64, b: u64) -> u32 {
        self.bits as u32 - (a ^ b).count_ones()
    }
}

#[inline(always)]
pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Multi-round bucket hashing: each round maps an embedding to one of
/// `2^bits_per_round` buckets via its own sign hyperplanes.
#[derive(Clone, Debug)]
pub struct SdimHasher {
    pub rounds: usize,
    rounds_hash: Vec<SimHash>,
}

impl SdimHasher {
    pub fn new(dim: usize, rounds: usize, bits_per_round: usize, seed: u64) -> Result<Self> {
        if rounds == 0 {
            return Err(GenliError::config("sdim needs at least one round"));
        }
        let rounds_hash = (0..rounds)
            .map(|r| SimHash::new(dim, bits_per_round, seed.wrapping_add(r as u64 * 7919)))
            .collect::<Result<_>>()?;
        Ok(SdimHasher { rounds, rounds_hash })
    }

    pub fn codes(&self, e: &[f32]) -> Vec<u64> {
        self.rounds_hash.iter().map(|h| h.signature(e)).collect()
    }
}

/// Number of rounds in which two bucket codes coincide.
#[inline(always)]
pub fn collisions(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as u32
}

/// Behaviors colliding with the target in at least one round, weighted by
/// their collision count; positions in ascending order.
pub fn sdim_collision_select(behavior_codes: &[Vec<u64>], target_codes: &[u64]) -> Vec<(usize, u32)> {
    behavior_codes
        .iter()
        .enumerate()
        .filter_map(|(p, c)| {
            let n = collisions(c, target_codes);
            (n > 0).then_some((p, n))
        })
        .collect()
}

/// Target attention score `(e_t W_q)·(e_b W_k) / sqrt(d_h)` summed over
/// heads, with `W_q, W_k` stored row-major `dim x (heads*head_dim)`.
#[derive(Clone, Debug)]
pub struct TwinScorer {
    pub dim: usize,
    pub width: usize,
    pub head_dim: usize,
    wq: Vec<f32>,
    wk: Vec<f32>,
}

impl TwinScorer {
    pub fn new(dim: usize, heads: usize, head_dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || heads == 0 || head_dim == 0 {
            return Err(GenliError::config("twin scorer needs positive widths"));
        }
        let width = heads * head_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f32).sqrt();
        let mut w = || (0..dim * width).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<f32>>();
        let wq = w();
        let wk = w();
        Ok(TwinScorer { dim, width, head_dim, wq, wk })
    }

    /// Projection matrices set to the identity (requires `dim == width`).
    pub fn identity(dim: usize, head_dim: usize) -> Self {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        TwinScorer { dim, width: dim, head_dim, wq: eye.clone(), wk: eye }
    }

    fn project(w: &[f32], e: &[f32], width: usize) -> Vec<f32> {
        let mut out = vec![0.0; width];
        for (i, &x) in e.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&w[i * width..(i + 1) * width]) {
                *o += x * wv;
            }
        }
        out
    }

    pub fn query(&self, target: &[f32]) -> Vec<f32> {
        let mut q = Self::project(&self.wq, target, self.width);
        let s = 1.0 / (self.head_dim as f32).sqrt();
        q.iter_mut().for_each(|v| *v *= s);
        q
    }

    pub fn key(&self, behavior: &[f32]) -> Vec<f32> {
        Self::project(&self.wk, behavior, self.width)
    }

    /// Score from a scaled query and a cached key.
    #[inline(always)]
    pub fn score_cached(query: &[f32], key: &[f32]) -> f32 {
        dot(query, key)
    }

    pub fn score(&self, behavior: &[f32], target: &[f32]) -> f32 {
        dot(&self.query(target), &self.key(behavior))
    }
}

/// Mask-aware mean of behavior embeddings (`rows` is row-major, `dim` wide).
pub fn avg_pool_feature(rows: &[f32], dim: usize, mask: &[bool]) -> Result<Vec<f32>> {
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Err(GenliError::data("average pooling needs at least one valid behavior"));
    }
    let mut out = vec![0.0f32; dim];
    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (o, &x) in out.iter_mut().zip(&rows[r * dim..(r + 1) * dim]) {
            *o += x;
        }
    }
    let inv = 1.0 / valid as f32;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

/// Top-k of precomputed per-position scores with the shared tie rule.
pub fn topk_scores<T: Score>(scores: &[T], k: usize) -> Selection<T> {
    select_topk(scores.iter().copied().enumerate(), k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_product_examples() {
        assert_eq!(score_inner_product(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score_inner_product(&[0.6, 0.8], &[0.6, 0.8]).unwrap(), 1.0);
        let a: Vec<f32> = (0..13).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..13).map(|i| 1.0 - i as f32 * 0.25).collect();
        let want: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((score_inner_product(&a, &b).unwrap() - want).abs() < 1e-5);
        assert!(score_inner_product(&a, &b[..3]).is_err());
    }

    #[test]
    fn category_match() {
        assert_eq!(score_category_match(3, 3), 1);
        assert_eq!(score_category_match(3, 4), 0);
        let s = topk_scores(&[1u32; 10], 3);
        assert_eq!(s.positions, vec![0, 1, 2]);
    }

    #[test]
    fn simhash_identity_and_negation() {
        let h = SimHash::new(8, 64, 3).unwrap();
        let e = [0.3, -0.1, 0.7, 0.2, -0.5, 0.9, 0.05, -0.4];
        let neg: Vec<f32> = e.iter().map(|v| -v).collect();
        assert_eq!(hamming(h.signature(&e), h.signature(&e)), 0);
        assert_eq!(hamming(h.signature(&e), h.signature(&neg)), 64);
        assert_eq!(h.score(h.signature(&e), h.signature(&e)), 64);
    }

    #[test]
    fn sdim_identical_and_distinct() {
        let s = SdimHasher::new(4, 4, 3, 1).unwrap();
        let e = [0.1, 0.2, -0.3, 0.4];
        let c = s.codes(&e);
        assert_eq!(collisions(&c, &c), 4);
        let one = SdimHasher::new(4, 1, 3, 1).unwrap();
        let target = one.codes(&e);
        let others: Vec<Vec<u64>> = vec![vec![target[0] ^ 1], vec![target[0] ^ 2]];
        assert!(sdim_collision_select(&others, &target).is_empty());
    }

    #[test]
    fn twin_identity_examples() {
        let t = TwinScorer::identity(8, 8);
        let mut u = [0.0f32; 8];
        u[2] = 1.0;
        let mut v = [0.0f32; 8];
        v[5] = 1.0;
        assert_eq!(t.score(&u, &v), 0.0);
        assert!((t.score(&u, &u) - 1.0 / 8f32.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn avg_pool_examples() {
        let v = [1.0, -2.0, 0.5];
        let rows: Vec<f32> = v.iter().chain(&v).chain(&v).copied().collect();
        assert_eq!(avg_pool_feature(&rows, 3, &[true; 3]).unwrap(), v.to_vec());
        let rows: Vec<f32> = v.iter().chain(v.iter()).enumerate().map(|(i, &x)| if i < 3 { x } else { -x }).collect();
        assert_eq!(avg_pool_feature(&rows, 3, &[true, true]).unwrap(), vec![0.0; 3]);
        assert!(avg_pool_feature(&rows, 3, &[false, false]).is_err());
    }
}
