//! Planted-interest synthetic impressions.
//!
//! Categories are grouped into topics. Every user likes a few categories in a
//! few topics. The older part of the history cycles through the user's
//! topics in phases, drawing items from the liked categories of the phase
//! topic. The most recent behaviors browse the current topic across all of
//! its categories, so they reveal the topic but not the preference inside
//! it. Targets mostly come from the current topic and are clicked with
//! probability `p_hi` when their category is liked and `p_lo` otherwise.
//!
//! A small set of globally hot items is shown far more often than anything
//! else and clicked at a flat, below-average rate. Hot items also leak into
//! histories. Click counts alone therefore overrate them; only click rate
//! relative to exposure separates them from genuine preference.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::format::write_dataset;
use crate::data::sampling::{negative_sample, RawImpression};
use crate::data::types::{Behavior, BehaviorSequence, Dataset};
use crate::data::vocab::Vocabulary;
use crate::error::{GenliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub topics: usize,
    /// Liked categories per user.
    pub clusters: usize,
    /// Topics the liked categories are spread over.
    pub user_topics: usize,
    pub seq_len: usize,
    pub impressions_per_user: usize,
    /// Consecutive behaviors spent on one topic in the older history.
    pub phase_len: usize,
    /// Most recent behaviors that browse the current topic.
    pub browse_len: usize,
    /// Fraction of history behaviors drawn uniformly from all items.
    pub noise: f64,
    /// Probability that a target comes from the current topic.
    pub in_context: f64,
    pub p_hi: f64,
    pub p_lo: f64,
    /// Fraction of a phase drawn from liked categories; the rest browses the
    /// phase topic at random.
    pub phase_purity: f64,
    /// Globally popular items.
    pub hot_items: usize,
    /// Fraction of impressions that show a hot item.
    pub hot_share: f64,
    /// Click probability of a hot item, independent of preference.
    pub hot_ctr: f64,
    /// Fraction of history behaviors on hot items.
    pub hot_history: f64,
    /// Write the shown target as the exposed item.
    pub log_exposure: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 11000,
            items: 3072,
            categories: 64,
            topics: 8,
            clusters: 9,
            user_topics: 3,
            seq_len: 500,
            impressions_per_user: 10,
            phase_len: 40,
            browse_len: 10,
            noise: 0.1,
            in_context: 0.9,
            p_hi: 0.9,
            p_lo: 0.1,
            phase_purity: 1.0,
            hot_items: 15,
            hot_share: 0.15,
            hot_ctr: 0.2,
            hot_history: 0.03,
            log_exposure: true,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(GenliError::config(m));
        if self.users == 0 || self.items == 0 || self.categories == 0 || self.seq_len == 0 {
            return fail("users, items, categories and seq_len must be positive".into());
        }
        if self.clusters > self.categories {
            return fail(format!("{} clusters per user exceed {} categories", self.clusters, self.categories));
        }
        if self.items < self.categories {
            return fail(format!("{} items cannot cover {} categories", self.items, self.categories));
        }
        if self.topics == 0 || self.topics > self.categories {
            return fail(format!("topics must be in 1..={}", self.categories));
        }
        if self.user_topics == 0 || self.user_topics > self.topics || self.user_topics > self.clusters {
            return fail("user_topics must be at least 1 and at most min(topics, clusters)".into());
        }
        let per_topic = self.categories / self.topics;
        if self.clusters.div_ceil(self.user_topics) > per_topic {
            return fail(format!(
                "{} clusters over {} topics need more than the {per_topic} categories per topic",
                self.clusters, self.user_topics
            ));
        }
        if self.phase_len == 0 {
            return fail("phase_len must be positive".into());
        }
        if self.hot_items > self.items {
            return fail(format!("{} hot items exceed {} items", self.hot_items, self.items));
        }
        if self.hot_items == 0 && (self.hot_share > 0.0 || self.hot_history > 0.0) {
            return fail("hot_share and hot_history need hot_items > 0".into());
        }
        for (name, v) in [
            ("noise", self.noise),
            ("in_context", self.in_context),
            ("p_hi", self.p_hi),
            ("p_lo", self.p_lo),
            ("phase_purity", self.phase_purity),
            ("hot_share", self.hot_share),
            ("hot_ctr", self.hot_ctr),
            ("hot_history", self.hot_history),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.p_lo >= self.p_hi {
            return fail(format!("p_lo ({}) must be below p_hi ({})", self.p_lo, self.p_hi));
        }
        Ok(())
    }

    fn category_of(&self, item: usize) -> usize {
        item % self.categories
    }

    fn topic_of(&self, category: usize) -> usize {
        category % self.topics
    }

    fn random_item_in(&self, category: usize, rng: &mut impl Rng) -> usize {
        let count = (self.items - category).div_ceil(self.categories);
        category + self.categories * rng.gen_range(0..count)
    }

    /// Categories of one topic (only the first `categories / topics` members
    /// so every topic has the same size).
    fn topic_categories(&self, topic: usize) -> Vec<usize> {
        let per = self.categories / self.topics;
        (0..per).map(|j| topic + j * self.topics).collect()
    }
}

/// Raw impressions plus whether each target was inside the user's clusters.
pub struct SyntheticImpressions {
    pub raw: Vec<RawImpression>,
    pub in_cluster: Vec<bool>,
    pub items: Vocabulary,
    pub categories: Vocabulary,
}

/// Dense vocabulary index of a raw synthetic item or category id.
fn idx(i: usize) -> u32 {
    i as u32 + 1
}

pub fn generate_impressions(spec: &SyntheticSpec) -> Result<SyntheticImpressions> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut raw = Vec::with_capacity(spec.users * spec.impressions_per_user);
    let mut in_cluster = Vec::with_capacity(raw.capacity());
    let all_topics: Vec<usize> = (0..spec.topics).collect();
    let hot: Vec<usize> = rand::seq::index::sample(&mut rng, spec.items, spec.hot_items).into_vec();

    for u in 0..spec.users {
        let topics: Vec<usize> = all_topics.choose_multiple(&mut rng, spec.user_topics).copied().collect();
        let mut liked: Vec<Vec<usize>> = vec![Vec::new(); topics.len()];
        for (j, &t) in topics.iter().enumerate() {
            let want = spec.clusters / topics.len() + usize::from(j < spec.clusters % topics.len());
            liked[j] = spec.topic_categories(t).choose_multiple(&mut rng, want).copied().collect();
        }
        let likes = |c: usize| topics.iter().zip(&liked).any(|(&t, l)| spec.topic_of(c) == t && l.contains(&c));

        let hist_len = spec.seq_len - rng.gen_range(0..=spec.seq_len / 4);
        let browse = spec.browse_len.min(hist_len);
        let current = rng.gen_range(0..topics.len());
        let mut order: Vec<usize> = (0..topics.len()).collect();
        order.shuffle(&mut rng);
        let mut history = Vec::with_capacity(hist_len);
        let mut ts = 1_600_000_000i64 + rng.gen_range(0..86_400);
        for pos in 0..hist_len {
            ts += rng.gen_range(30..600);
            let item = if rng.gen_bool(spec.noise) {
                rng.gen_range(0..spec.items)
            } else if rng.gen_bool(spec.hot_history) {
                *hot.choose(&mut rng).unwrap()
            } else if pos >= hist_len - browse {
                let cats = spec.topic_categories(topics[current]);
                spec.random_item_in(*cats.choose(&mut rng).unwrap(), &mut rng)
            } else {
                let phase = order[(pos / spec.phase_len) % order.len()];
                let category = if rng.gen_bool(spec.phase_purity) {
                    *liked[phase].choose(&mut rng).unwrap()
                } else {
                    *spec.topic_categories(topics[phase]).choose(&mut rng).unwrap()
                };
                spec.random_item_in(category, &mut rng)
            };
            history.push(Behavior::new(idx(item), idx(spec.category_of(item)), ts));
        }
        let sequence = Arc::new(BehaviorSequence::from_history(history, spec.seq_len));
        let user = format!("u{u}");
        let context = spec.topic_categories(topics[current]);
        for _ in 0..spec.impressions_per_user {
            let (item, inside, p_click) = if rng.gen_bool(spec.hot_share) {
                let item = *hot.choose(&mut rng).unwrap();
                (item, likes(spec.category_of(item)), spec.hot_ctr)
            } else {
                let category = if rng.gen_bool(spec.in_context) {
                    *context.choose(&mut rng).unwrap()
                } else {
                    rng.gen_range(0..spec.categories)
                };
                let inside = likes(category);
                (spec.random_item_in(category, &mut rng), inside, if inside { spec.p_hi } else { spec.p_lo })
            };
            let category = spec.category_of(item);
            let clicked = rng.gen_bool(p_click);
            raw.push(RawImpression {
                user: user.clone(),
                sequence: Arc::clone(&sequence),
                target_item: idx(item),
                target_category: idx(category),
                clicked,
                exposed: spec.log_exposure.then_some(idx(item)),
            });
            in_cluster.push(inside);
        }
    }

    let mut items = Vocabulary::new("item");
    for i in 0..spec.items {
        items.intern(&format!("i{i}"));
    }
    let mut categories = Vocabulary::new("category");
    for c in 0..spec.categories {
        categories.intern(&format!("c{c}"));
    }
    Ok(SyntheticImpressions { raw, in_cluster, items, categories })
}

/// Generated, negative-sampled dataset with its vocabularies.
pub struct Synthetic {
    pub dataset: Dataset,
    pub items: Vocabulary,
    pub categories: Vocabulary,
    pub raw_impressions: usize,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    let imp = generate_impressions(spec)?;
    let raw_impressions = imp.raw.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f5a_3b1e);
    let samples = negative_sample(imp.raw, &mut rng);
    let dataset = Dataset { samples, num_items: imp.items.len(), num_categories: imp.categories.len() };
    Ok(Synthetic { dataset, items: imp.items, categories: imp.categories, raw_impressions })
}

/// Files written by [`write_synthetic`].
#[derive(Clone, Debug)]
pub struct WrittenFiles {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub item_vocab: PathBuf,
    pub category_vocab: PathBuf,
    pub train_samples: usize,
    pub valid_samples: usize,
}

/// Generates a dataset, splits it by user and writes records and vocabularies.
pub fn write_synthetic(spec: &SyntheticSpec, valid_ratio: f64, dir: &Path) -> Result<WrittenFiles> {
    let syn = generate_synthetic(spec)?;
    std::fs::create_dir_all(dir)
        .map_err(|e| GenliError::config(format!("cannot create output directory {}: {e}", dir.display())))?;
    let (train, valid) = syn.dataset.split_by_user(1.0 - valid_ratio);
    let files = WrittenFiles {
        train: dir.join("train.tsv"),
        valid: dir.join("valid.tsv"),
        item_vocab: dir.join("item.vocab"),
        category_vocab: dir.join("category.vocab"),
        train_samples: train.len(),
        valid_samples: valid.len(),
    };
    write_dataset(&files.train, &train.samples, &syn.items, &syn.categories)?;
    write_dataset(&files.valid, &valid.samples, &syn.items, &syn.categories)?;
    syn.items.save(&files.item_vocab)?;
    syn.categories.save(&files.category_vocab)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec { users: 50, seq_len: 60, ..SyntheticSpec::default() }
    }

    #[test]
    fn too_many_clusters_is_a_config_error() {
        let spec = SyntheticSpec { clusters: 65, ..small() };
        assert!(matches!(spec.validate(), Err(GenliError::Config(_))));
    }

    #[test]
    fn same_seed_same_impressions() {
        let a = generate_impressions(&small()).unwrap();
        let b = generate_impressions(&small()).unwrap();
        assert_eq!(a.raw, b.raw);
        let c = generate_impressions(&SyntheticSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.raw, c.raw);
    }

    #[test]
    fn sequences_have_fixed_length_and_valid_categories() {
        let imp = generate_impressions(&small()).unwrap();
        for r in &imp.raw {
            let s = &r.sequence;
            assert_eq!(s.len(), 60);
            for p in 0..s.valid() {
                let item = s.items()[p] as usize - 1;
                assert_eq!(s.categories()[p] as usize - 1, item % 64);
            }
            assert!(r.target_item >= 1 && (r.target_item as usize) <= 3072);
        }
    }

    #[test]
    fn planted_clusters_raise_click_rate() {
        let imp = generate_impressions(&small()).unwrap();
        let rate = |want: bool| {
            let (n, c) = imp
                .raw
                .iter()
                .zip(&imp.in_cluster)
                .filter(|(_, &i)| i == want)
                .fold((0usize, 0usize), |(n, c), (r, _)| (n + 1, c + r.clicked as usize));
            c as f64 / n as f64
        };
        assert!(rate(true) > rate(false) + 0.3);
    }
}
