//! Behavior retrieval by distribution lookup.
//!
//! A behavior's score under a distribution is the probability stored at its
//! item index modulo the distribution size, so scoring costs one load no
//! matter how wide the embeddings are. The top-k positions per distribution
//! are selected with a bounded heap in a single pass.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::data::BehaviorSequence;
use crate::error::{GenliError, Result};

/// Maps item indices onto `n` buckets (`id mod n`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bucketer {
    n: u32,
    mask: u32,
    magic: u64,
}

impl Bucketer {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > u32::MAX as usize {
            return Err(GenliError::config(format!("distribution size {n} must be in 1..=2^32-1")));
        }
        let n = n as u32;
        let mask = if n.is_power_of_two() { n - 1 } else { 0 };
        Ok(Bucketer { n, mask, magic: (u64::MAX / n as u64).wrapping_add(1) })
    }

    pub fn size(&self) -> usize {
        self.n as usize
    }

    #[inline(always)]
    pub fn bucket(&self, id: u32) -> usize {
        if self.mask != 0 || self.n == 1 {
            (id & self.mask) as usize
        } else {
            // Lemire's fastmod for 32-bit operands
            let low = self.magic.wrapping_mul(id as u64);
            ((low as u128 * self.n as u128) >> 64) as usize
        }
    }

    /// Probability of `id` under `p`.
    #[inline(always)]
    pub fn lookup<T: Copy>(&self, id: u32, p: &[T]) -> T {
        p[self.bucket(id)]
    }
}

/// Scores that can be totally ordered for selection.
pub trait Score: Copy + std::fmt::Debug {
    fn order(&self, other: &Self) -> Ordering;
}

impl Score for f64 {
    #[inline(always)]
    fn order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl Score for f32 {
    #[inline(always)]
    fn order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl Score for i32 {
    #[inline(always)]
    fn order(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }
}

impl Score for u32 {
    #[inline(always)]
    fn order(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }
}

/// Ranking used everywhere: higher score first, then lower position (the
/// sequence is newest-first, so lower positions are more recent).
#[inline(always)]
pub fn rank<T: Score>(a: (usize, T), b: (usize, T)) -> Ordering {
    b.1.order(&a.1).then(a.0.cmp(&b.0))
}

/// Heap entry ordered so that the worst-ranked candidate sits on top.
struct Worst<T>(usize, T);

impl<T: Score> PartialEq for Worst<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Score> Eq for Worst<T> {}

impl<T: Score> PartialOrd for Worst<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Score> Ord for Worst<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank((self.0, self.1), (other.0, other.1))
    }
}

/// Selected positions with their scores, best first. Holds at most `k`
/// entries; fewer means the remaining slots are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection<T = f64> {
    pub k: usize,
    pub positions: Vec<usize>,
    pub scores: Vec<T>,
}

impl<T: Score> Selection<T> {
    /// Exactly `k` slots; `None` marks padding.
    pub fn slots(&self) -> Vec<Option<usize>> {
        let mut s: Vec<Option<usize>> = self.positions.iter().copied().map(Some).collect();
        s.resize(self.k, None);
        s
    }
}

/// Top-k over `(position, score)` pairs with the shared tie rule.
pub fn select_topk<T: Score>(scored: impl IntoIterator<Item = (usize, T)>, k: usize) -> Selection<T> {
    let mut heap: BinaryHeap<Worst<T>> = BinaryHeap::with_capacity(k + 1);
    if k > 0 {
        for (pos, s) in scored {
            if heap.len() < k {
                heap.push(Worst(pos, s));
            } else {
                let mut top = heap.peek_mut().expect("non-empty");
                if rank((pos, s), (top.0, top.1)) == Ordering::Less {
                    *top = Worst(pos, s);
                }
            }
        }
    }
    let mut best: Vec<(usize, T)> = heap.into_iter().map(|w| (w.0, w.1)).collect();
    best.sort_by(|a, b| rank(*a, *b));
    Selection { k, positions: best.iter().map(|b| b.0).collect(), scores: best.iter().map(|b| b.1).collect() }
}

/// Top-k valid positions of `items[..valid]` scored by lookup into `p`.
pub fn topk_by_lookup<T: Score>(items: &[u32], valid: usize, p: &[T], bucketer: &Bucketer, k: usize) -> Selection<T> {
    select_topk(items[..valid].iter().enumerate().map(|(pos, &id)| (pos, bucketer.lookup(id, p))), k)
}

pub fn lookup_score(item: u32, p: &[f64]) -> f64 {
    p[item as usize % p.len()]
}

pub fn retrieve_topk(seq: &BehaviorSequence, p: &[f64], k: usize) -> Result<Selection<f64>> {
    if k == 0 {
        return Err(GenliError::config("k must be at least 1"));
    }
    let b = Bucketer::new(p.len())?;
    Ok(topk_by_lookup(seq.items(), seq.valid(), p, &b, k))
}

/// Interest kinds in their fixed order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Implicit,
    Explicit,
    Relative,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Implicit, Kind::Explicit, Kind::Relative];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Implicit => "implicit",
            Kind::Explicit => "explicit",
            Kind::Relative => "relative",
        }
    }
}

/// One selection per kind.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalResult {
    pub implicit: Selection<f64>,
    pub explicit: Selection<f64>,
    pub relative: Selection<f64>,
}

impl RetrievalResult {
    pub fn get(&self, kind: Kind) -> &Selection<f64> {
        match kind {
            Kind::Implicit => &self.implicit,
            Kind::Explicit => &self.explicit,
            Kind::Relative => &self.relative,
        }
    }

    /// Total slot count over the three kinds.
    pub fn total_slots(&self) -> usize {
        self.implicit.k + self.explicit.k + self.relative.k
    }
}

pub fn retrieve_all(
    seq: &BehaviorSequence,
    implicit: &[f64],
    explicit: &[f64],
    relative: &[f64],
    k: usize,
) -> Result<RetrievalResult> {
    if implicit.len() != explicit.len() || explicit.len() != relative.len() {
        return Err(GenliError::config(format!(
            "distribution sizes differ: {}, {}, {}",
            implicit.len(),
            explicit.len(),
            relative.len()
        )));
    }
    Ok(RetrievalResult {
        implicit: retrieve_topk(seq, implicit, k)?,
        explicit: retrieve_topk(seq, explicit, k)?,
        relative: retrieve_topk(seq, relative, k)?,
    })
}
