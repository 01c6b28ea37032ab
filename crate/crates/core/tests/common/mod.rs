#![allow(dead_code)]

use std::sync::Arc;

use genli::data::{Behavior, BehaviorSequence, Sample};
use genli::model::{Model, ModelConfig, Variant};
use genli::nn::ParameterStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ITEMS: usize = 40;
pub const CATEGORIES: usize = 8;

/// L=16, N=64, k=2, l=4, d=8 (4 + 4).
pub fn small_config(model: Variant) -> ModelConfig {
    ModelConfig {
        model,
        item_dim: 4,
        category_dim: 4,
        buckets: 64,
        heads: 2,
        head_dim: 4,
        k: 2,
        short_len: 4,
        hidden: vec![6, 5],
    }
}

pub fn build(cfg: ModelConfig, seed: u64) -> (Model, ParameterStore) {
    let mut store = ParameterStore::new();
    let model = Model::new(cfg, ITEMS, CATEGORIES, seed, &mut store).unwrap();
    (model, store)
}

pub fn random_sequence(rng: &mut impl Rng, len: usize, valid: usize) -> Arc<BehaviorSequence> {
    let history = (0..valid)
        .map(|t| {
            let item = rng.gen_range(1..ITEMS as u32);
            Behavior::new(item, item % (CATEGORIES as u32 - 1) + 1, t as i64 + 1)
        })
        .collect();
    Arc::new(BehaviorSequence::from_history(history, len))
}

pub fn random_sample(rng: &mut impl Rng, len: usize) -> Sample {
    let valid = rng.gen_range(1..=len);
    let item = rng.gen_range(1..ITEMS as u32);
    Sample {
        user: format!("u{}", rng.gen::<u16>()),
        sequence: random_sequence(rng, len, valid),
        target_item: item,
        target_category: item % (CATEGORIES as u32 - 1) + 1,
        label: rng.gen_range(0..=1),
        exposed: rng.gen_bool(0.5).then(|| rng.gen_range(1..ITEMS as u32)),
    }
}

pub fn random_batch(seed: u64, n: usize, len: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_sample(&mut rng, len)).collect()
}

/// Central-difference check of the full training loss (CTR + both auxiliary
/// losses) with respect to every parameter of `cfg`'s model.
pub fn gradcheck_model(cfg: ModelConfig, seed: u64) -> genli::gradcheck::GradCheckReport {
    use genli::gradcheck::{check_gradients_in_region, GradCheckConfig};
    use genli::model::LossWeights;
    use genli::nn::Tape;

    let (model, mut store) = build(cfg, seed);
    let batch = random_batch(seed ^ 0xabc, 4, 16);
    let refs: Vec<&Sample> = batch.iter().collect();
    let weights = LossWeights { implicit: 1.0, explicit: 1.0 };
    let loss_of = |store: &ParameterStore| -> genli::Result<(f64, genli::nn::Gradients)> {
        let mut tape = Tape::new(store);
        let fwd = model.forward(&mut tape, &refs)?;
        let parts = model.loss(&mut tape, &refs, &fwd, weights)?;
        let g = tape.backward(parts.total)?;
        Ok((parts.total_value, g))
    };
    let (_, grads) = loss_of(&store).unwrap();
    check_gradients_in_region(
        &mut store,
        &grads,
        GradCheckConfig::default(),
        |_, _| true,
        |s| {
            let mut tape = Tape::new(s);
            let fwd = model.forward(&mut tape, &refs)?;
            let value = model.loss(&mut tape, &refs, &fwd, weights)?.total_value;
            // Retrieved positions are piecewise constant in the parameters.
            let mut region: Vec<Vec<usize>> = Vec::new();
            for r in fwd.retrieval.iter().flatten() {
                region.extend([&r.implicit, &r.explicit, &r.relative].map(|s| s.positions.clone()));
            }
            region.extend(fwd.baseline_selection.iter().flatten().map(|s| s.positions.clone()));
            Ok((value, region))
        },
    )
    .unwrap()
}
