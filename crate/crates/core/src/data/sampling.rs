use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;

use crate::data::types::{BehaviorSequence, Sample};

/// An impression before negative sampling: shown target plus click outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImpression {
    pub user: String,
    pub sequence: Arc<BehaviorSequence>,
    pub target_item: u32,
    pub target_category: u32,
    pub clicked: bool,
    pub exposed: Option<u32>,
}

impl RawImpression {
    fn into_sample(self) -> Sample {
        Sample {
            user: self.user,
            sequence: self.sequence,
            target_item: self.target_item,
            target_category: self.target_category,
            label: self.clicked as u8,
            exposed: self.exposed,
        }
    }
}

/// Keeps every click and draws as many non-clicked impressions per user,
/// uniformly without replacement. Input order is preserved.
pub fn negative_sample<R: Rng>(raw: Vec<RawImpression>, rng: &mut R) -> Vec<Sample> {
    let mut streams: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut by_user: HashMap<&str, usize> = HashMap::new();
    for (i, r) in raw.iter().enumerate() {
        let slot = *by_user.entry(r.user.as_str()).or_insert_with(|| {
            streams.push((Vec::new(), Vec::new()));
            streams.len() - 1
        });
        if r.clicked {
            streams[slot].0.push(i);
        } else {
            streams[slot].1.push(i);
        }
    }
    let mut keep = vec![false; raw.len()];
    for (pos, neg) in &streams {
        for &i in pos {
            keep[i] = true;
        }
        let n = pos.len().min(neg.len());
        for j in index::sample(rng, neg.len(), n) {
            keep[neg[j]] = true;
        }
    }
    drop(by_user);
    raw.into_iter().zip(keep).filter(|(_, k)| *k).map(|(r, _)| r.into_sample()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stream(user: &str, pos: usize, neg: usize) -> Vec<RawImpression> {
        let seq = Arc::new(BehaviorSequence::from_history(vec![], 2));
        (0..pos + neg)
            .map(|i| RawImpression {
                user: user.into(),
                sequence: Arc::clone(&seq),
                target_item: i as u32 + 1,
                target_category: 1,
                clicked: i < pos,
                exposed: None,
            })
            .collect()
    }

    #[test]
    fn ten_positives_draw_ten_negatives() {
        let out = negative_sample(stream("u", 10, 100), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(out.iter().filter(|s| s.label == 1).count(), 10);
        assert_eq!(out.iter().filter(|s| s.label == 0).count(), 10);
    }

    #[test]
    fn fixed_seed_gives_identical_negatives() {
        let a = negative_sample(stream("u", 5, 50), &mut ChaCha8Rng::seed_from_u64(9));
        let b = negative_sample(stream("u", 5, 50), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn ratio_is_one_across_users() {
        let mut raw = stream("a", 7, 30);
        raw.extend(stream("b", 3, 2));
        raw.extend(stream("c", 12, 40));
        let out = negative_sample(raw, &mut ChaCha8Rng::seed_from_u64(3));
        let pos = out.iter().filter(|s| s.label == 1).count();
        let neg = out.len() - pos;
        // user b has only two negatives available
        assert_eq!(pos, 22);
        assert_eq!(neg, 21);
    }
}
