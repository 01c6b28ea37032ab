use std::sync::Arc;

use crate::error::{GenliError, Result};

/// One interaction event. Indices are vocabulary indices; index 0 is padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Behavior {
    pub item: u32,
    pub category: u32,
    pub timestamp: i64,
}

impl Behavior {
    pub const PADDING: Behavior = Behavior { item: 0, category: 0, timestamp: 0 };

    pub fn new(item: u32, category: u32, timestamp: i64) -> Self {
        Behavior { item, category, timestamp }
    }

    pub fn is_padding(&self) -> bool {
        self.item == 0
    }
}

/// Fixed-length, newest-first behavior history. Valid behaviors occupy
/// positions `0..valid`; the remaining slots are padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BehaviorSequence {
    items: Vec<u32>,
    categories: Vec<u32>,
    timestamps: Vec<i64>,
    valid: usize,
}

impl BehaviorSequence {
    /// Sorts by timestamp (stable), keeps the `len` most recent behaviors and
    /// stores them newest-first, padding up to `len` slots.
    pub fn from_history(mut history: Vec<Behavior>, len: usize) -> Self {
        history.sort_by_key(|b| b.timestamp);
        let keep = history.len().min(len);
        let recent = &history[history.len() - keep..];
        let mut items = Vec::with_capacity(len);
        let mut categories = Vec::with_capacity(len);
        let mut timestamps = Vec::with_capacity(len);
        for b in recent.iter().rev() {
            items.push(b.item);
            categories.push(b.category);
            timestamps.push(b.timestamp);
        }
        items.resize(len, 0);
        categories.resize(len, 0);
        timestamps.resize(len, 0);
        BehaviorSequence { items, categories, timestamps, valid: keep }
    }

    /// Number of slots (L).
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn valid(&self) -> usize {
        self.valid
    }

    pub fn items(&self) -> &[u32] {
        &self.items
    }

    pub fn categories(&self) -> &[u32] {
        &self.categories
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn is_valid(&self, pos: usize) -> bool {
        pos < self.valid
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.len()).map(|p| p < self.valid).collect()
    }

    pub fn behavior(&self, pos: usize) -> Behavior {
        Behavior { item: self.items[pos], category: self.categories[pos], timestamp: self.timestamps[pos] }
    }

    /// Valid behaviors in chronological order (oldest first).
    pub fn chronological(&self) -> Vec<Behavior> {
        (0..self.valid).rev().map(|p| self.behavior(p)).collect()
    }

    /// Short-term window: the first `l` slots (newest-first) and their mask.
    pub fn window(&self, l: usize) -> (Vec<u32>, Vec<u32>, Vec<bool>) {
        let n = l.min(self.len());
        let mut items = self.items[..n].to_vec();
        let mut cats = self.categories[..n].to_vec();
        let mut mask: Vec<bool> = (0..n).map(|p| p < self.valid).collect();
        items.resize(l, 0);
        cats.resize(l, 0);
        mask.resize(l, false);
        (items, cats, mask)
    }
}

/// One impression.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub user: String,
    pub sequence: Arc<BehaviorSequence>,
    pub target_item: u32,
    pub target_category: u32,
    pub label: u8,
    pub exposed: Option<u32>,
}

impl Sample {
    pub fn target(&self) -> Behavior {
        Behavior { item: self.target_item, category: self.target_category, timestamp: 0 }
    }

    /// Exposed item for the implicit-interest loss. Without a logged exposure,
    /// the most recent behavior sharing the target's category stands in, and
    /// failing that the most recent behavior.
    pub fn exposed_or_surrogate(&self) -> Result<u32> {
        if let Some(e) = self.exposed {
            return Ok(e);
        }
        let seq = &self.sequence;
        if seq.valid() == 0 {
            return Err(GenliError::data(format!(
                "user {} has no exposed item and no behaviors to derive one from",
                self.user
            )));
        }
        let same_cat = (0..seq.valid()).find(|&p| seq.categories()[p] == self.target_category);
        Ok(seq.items()[same_cat.unwrap_or(0)])
    }
}

/// In-memory dataset with the vocabulary sizes (including padding) it needs.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_items: usize,
    pub num_categories: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.label == 1).count()
    }

    /// Deterministic split: the first `ratio` fraction of users go to the first
    /// part, the rest to the second. Samples of one user never straddle.
    pub fn split_by_user(&self, ratio: f64) -> (Dataset, Dataset) {
        let mut users: Vec<&str> = Vec::new();
        for s in &self.samples {
            if users.last() != Some(&s.user.as_str()) && !users.contains(&s.user.as_str()) {
                users.push(&s.user);
            }
        }
        let cut = ((users.len() as f64) * ratio).round() as usize;
        let head: std::collections::HashSet<&str> = users[..cut].iter().copied().collect();
        let (a, b): (Vec<Sample>, Vec<Sample>) =
            self.samples.iter().cloned().partition(|s| head.contains(s.user.as_str()));
        let mk = |samples| Dataset { samples, num_items: self.num_items, num_categories: self.num_categories };
        (mk(a), mk(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(n: usize) -> Vec<Behavior> {
        (0..n).map(|i| Behavior::new(i as u32 + 1, 1, i as i64 * 10)).collect()
    }

    #[test]
    fn short_history_is_padded() {
        let s = BehaviorSequence::from_history(hist(3), 5);
        assert_eq!(s.len(), 5);
        assert_eq!(s.mask(), vec![true, true, true, false, false]);
        assert_eq!(s.items(), &[3, 2, 1, 0, 0]);
    }

    #[test]
    fn long_history_keeps_most_recent() {
        let mut h = hist(7);
        h.reverse();
        let s = BehaviorSequence::from_history(h, 5);
        assert_eq!(s.items(), &[7, 6, 5, 4, 3]);
        assert_eq!(s.valid(), 5);
        assert!(s.timestamps().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn window_is_first_valid_slots() {
        let s = BehaviorSequence::from_history(hist(3), 6);
        let (items, _, mask) = s.window(4);
        assert_eq!(items, vec![3, 2, 1, 0]);
        assert_eq!(mask, vec![true, true, true, false]);
    }

    #[test]
    fn surrogate_prefers_same_category() {
        let h = vec![Behavior::new(5, 2, 1), Behavior::new(6, 3, 2), Behavior::new(7, 4, 3)];
        let seq = Arc::new(BehaviorSequence::from_history(h, 4));
        let mut s =
            Sample { user: "u".into(), sequence: seq, target_item: 9, target_category: 3, label: 1, exposed: None };
        assert_eq!(s.exposed_or_surrogate().unwrap(), 6);
        s.target_category = 8;
        assert_eq!(s.exposed_or_surrogate().unwrap(), 7);
        s.exposed = Some(2);
        assert_eq!(s.exposed_or_surrogate().unwrap(), 2);
        s.exposed = None;
        s.sequence = Arc::new(BehaviorSequence::from_history(vec![], 4));
        assert!(s.exposed_or_surrogate().is_err());
    }
}
