mod common;

use common::{build, random_batch, small_config};
use genli::data::{generate_synthetic, Dataset, Sample, SyntheticSpec};
use genli::evalbench::eval_model;
use genli::evalbench::infer::{Engine, TwinEngine};
use genli::model::{Model, Variant};
use genli::nn::ParameterStore;
use genli::trainer::{checkpoint_path, predict_all, train, TrainConfig, TrainOptions};

fn tiny_data(users: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec {
        users,
        items: 120,
        categories: 24,
        topics: 4,
        seq_len: 40,
        hot_items: 5,
        seed,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap().dataset
}

fn model_for(data: &Dataset, variant: Variant, seed: u64) -> (Model, ParameterStore) {
    let mut cfg = small_config(variant);
    cfg.short_len = 6;
    let mut store = ParameterStore::new();
    let model = Model::new(cfg, data.num_items, data.num_categories, seed, &mut store).unwrap();
    (model, store)
}

fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 32, lr: 0.01, patience: 0, ..TrainConfig::default() }
}

#[test]
fn single_precision_engine_agrees_with_training_graph() {
    let data = tiny_data(30, 3);
    for variant in [Variant::GENLI, Variant::AvgPool] {
        let (model, mut store) = model_for(&data, variant, 4);
        train(&model, &mut store, &data, None, &quick_train(1), &TrainOptions::default()).unwrap();
        let reference = predict_all(&model, &store, &data.samples, 64).unwrap();
        let engine = Engine::new(&model, &store).unwrap();
        let mut worst = 0.0f64;
        for (s, &r) in data.samples.iter().zip(&reference) {
            let state = engine.user_state(&s.sequence).unwrap();
            let p = engine.score(&state, s.target_item, s.target_category);
            worst = worst.max((f64::from(p) - r).abs());
        }
        assert!(worst < 1e-4, "{variant}: max deviation {worst}");
    }
}

#[test]
fn twin_engine_scores_are_probabilities() {
    let data = tiny_data(10, 5);
    let (model, store) = model_for(&data, Variant::GENLI, 6);
    let twin = TwinEngine::new(&model, &store, 2).unwrap();
    for s in data.samples.iter().take(20) {
        let state = twin.user_state(&s.sequence);
        let p = twin.score(&state, s.target_item, s.target_category);
        assert!(p > 0.0 && p < 1.0);
    }
    let (sim, sim_store) = build(small_config(Variant::SimHard), 1);
    assert!(Engine::new(&sim, &sim_store).is_err());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let data = tiny_data(20, 7);
    let tmp = tempfile::tempdir().unwrap();
    let (model, mut full) = model_for(&data, Variant::GENLI, 8);
    let opts = TrainOptions { checkpoint_dir: Some(tmp.path().join("a")), resume: None };
    let straight = train(&model, &mut full, &data, Some(&data), &quick_train(3), &opts).unwrap();

    let (model_b, mut first) = model_for(&data, Variant::GENLI, 8);
    let opts_b = TrainOptions { checkpoint_dir: Some(tmp.path().join("b")), resume: None };
    train(&model_b, &mut first, &data, Some(&data), &quick_train(1), &opts_b).unwrap();
    let (_, mut resumed) = model_for(&data, Variant::GENLI, 99);
    let opts_c = TrainOptions {
        checkpoint_dir: Some(tmp.path().join("c")),
        resume: Some(checkpoint_path(&tmp.path().join("b"), 0)),
    };
    let rest = train(&model_b, &mut resumed, &data, Some(&data), &quick_train(3), &opts_c).unwrap();

    assert_eq!(rest.epochs.len(), 2);
    assert_eq!(
        rest.to_csv().lines().skip(1).collect::<Vec<_>>(),
        straight.to_csv().lines().skip(2).collect::<Vec<_>>()
    );
    for id in full.ids() {
        assert!(full.value(id) == resumed.value(id), "{}", full.name(id));
    }
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data(15, 9);
    let run = || {
        let (model, mut store) = model_for(&data, Variant::GENLI, 10);
        train(&model, &mut store, &data, Some(&data), &quick_train(2), &TrainOptions::default()).unwrap().to_csv()
    };
    assert_eq!(run(), run());
}

#[test]
fn untrained_model_scores_near_chance() {
    let data = tiny_data(60, 11);
    let (model, store) = model_for(&data, Variant::GENLI, 12);
    let report = eval_model(&model, &store, &data, 128).unwrap();
    assert!((report.auc - 0.5).abs() < 0.1, "auc {}", report.auc);
    assert_eq!(report.samples, data.len());
    assert!(report.stages.is_some());
    let csv = report.to_csv();
    assert!(csv.starts_with("metric,value\nauc,"));
}

#[test]
fn sim_variants_train_without_an_engine() {
    let data = tiny_data(10, 13);
    for variant in [Variant::SimSoft, Variant::SimHard] {
        let (model, mut store) = model_for(&data, variant, 14);
        train(&model, &mut store, &data, None, &quick_train(1), &TrainOptions::default()).unwrap();
        let report = eval_model(&model, &store, &data, 64).unwrap();
        assert!(report.stages.is_none());
        assert!(report.auc.is_finite());
    }
}

#[test]
fn forward_is_independent_of_batch_composition() {
    let (model, store) = build(small_config(Variant::GENLI), 15);
    let batch = random_batch(16, 6, 16);
    let refs: Vec<&Sample> = batch.iter().collect();
    let together = model.predict(&store, &refs).unwrap();
    for (s, &p) in batch.iter().zip(&together) {
        let alone = model.predict(&store, &[s]).unwrap()[0];
        assert!((alone - p).abs() < 1e-12);
    }
}
