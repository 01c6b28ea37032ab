use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_gradients, GradCheckConfig};
use crate::nn::layers::{uniform, Activation, Dense, Mha, MhaConfig, Mlp};
use crate::nn::{ParameterStore, Tape, Tensor2D, Var};

/// Reduces any node to a scalar through a fixed random weighting.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.value(x).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.input(uniform(&mut rng, r, c, 1.0));
    let prod = tape.mul(x, w)?;
    let ones_c = tape.input(Tensor2D::filled(c, 1, 1.0));
    let col = tape.matmul(prod, ones_c)?;
    let ones_r = tape.input(Tensor2D::filled(1, r, 1.0));
    tape.matmul(ones_r, col)
}

fn run(store: &mut ParameterStore, build: impl Fn(&mut Tape) -> Result<Var>) {
    let grads = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape).unwrap();
        tape.backward(loss).unwrap()
    };
    let report = check_gradients(
        store,
        &grads,
        GradCheckConfig::default(),
        |_, _| true,
        |s| {
            let mut tape = Tape::new(s);
            let loss = build(&mut tape)?;
            Ok(tape.value(loss).get(0, 0))
        },
    )
    .unwrap();
    assert!(report.checked > 0);
    assert!(report.passed(), "worst {:?}", report.worst);
}

#[test]
fn dense_layers_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParameterStore::new();
    let mlp = Mlp::new(&mut store, "mlp", &[4, 6, 5, 3], Activation::PRelu, Activation::Sigmoid, &mut rng).unwrap();
    let x = uniform(&mut rng, 3, 4, 2.0);
    run(&mut store, |t| {
        let xv = t.input(x.clone());
        let y = mlp.forward(t, xv)?;
        project(t, y, 7)
    });
}

#[test]
fn softmax_and_nll_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParameterStore::new();
    let layer = Dense::new(&mut store, "d", 3, 7, Activation::None, &mut rng).unwrap();
    let x = uniform(&mut rng, 4, 3, 1.0);
    run(&mut store, |t| {
        let xv = t.input(x.clone());
        let z = layer.forward(t, xv)?;
        let p = t.softmax_rows(z)?;
        let q = t.scale(p, 0.5);
        let r = t.softmax_rows(q)?;
        let diff = t.sub(p, r)?;
        let rel = t.softmax_rows(diff)?;
        let a = t.nll_lookup(p, vec![(0, 0.25), (3, 0.25), (6, 0.0), (2, 0.25)])?;
        let b = project(t, rel, 3)?;
        t.weighted_sum(&[(a, 1.0), (b, 0.5)])
    });
}

#[test]
fn attention_with_masks_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParameterStore::new();
    let cfg = MhaConfig { heads: 2, head_dim: 3, input_dim: 4 };
    let mha = Mha::new(&mut store, "mha", cfg, &mut rng).unwrap();
    let q = store.add("q", uniform(&mut rng, 4, 4, 1.0)).unwrap();
    let kv = store.add("kv", uniform(&mut rng, 6, 4, 1.0)).unwrap();
    let mask = vec![true, true, false, true, false, true];
    run(&mut store, |t| {
        let qv = t.param(q);
        let kvv = t.param(kv);
        let out = mha.forward(t, qv, kvv, kvv, 2, 2, 3, mask.clone())?;
        project(t, out, 5)
    });
}

#[test]
fn structural_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParameterStore::new();
    let a = store.add("a", uniform(&mut rng, 4, 3, 1.0)).unwrap();
    let b = store.add("b", uniform(&mut rng, 4, 2, 1.0)).unwrap();
    let table = store.add_embedding("emb", uniform(&mut rng, 5, 3, 1.0)).unwrap();
    run(&mut store, |t| {
        let av = t.param(a);
        let bv = t.param(b);
        let cat = t.concat_cols(&[av, bv])?;
        let sel = t.select_rows(cat, vec![3, 0, 0, 2])?;
        let rs = t.reshape(sel, 2, 10)?;
        let e = t.embed(table, vec![1, 4, 1, 0, 2, 3])?;
        let stacked = t.concat_rows(&[av, e])?;
        let pooled = t.segment_mean(stacked, 5, vec![true, false, true, true, true, true, true, false, false, true])?;
        let g = t.sigmoid(pooled);
        let p1 = project(t, rs, 1)?;
        let p2 = project(t, g, 2)?;
        let logits = t.select_rows(cat, vec![0, 1, 2])?;
        let logits = t.concat_cols(&[logits])?;
        let col = t.input(Tensor2D::filled(5, 1, 0.3));
        let z = t.matmul(logits, col)?;
        let bce = t.bce_with_logits_mean(z, vec![1.0, 0.0, 1.0])?;
        t.weighted_sum(&[(p1, 1.0), (p2, -2.0), (bce, 0.7)])
    });
}

#[test]
fn embedding_padding_row_receives_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParameterStore::new();
    let table = store.add_embedding("emb", uniform(&mut rng, 4, 2, 1.0)).unwrap();
    let mut tape = Tape::new(&store);
    let e = tape.embed(table, vec![0, 2, 0]).unwrap();
    let loss = project(&mut tape, e, 9).unwrap();
    let g = tape.backward(loss).unwrap();
    let grad = g.get(table).unwrap();
    assert_eq!(grad.row(0), &[0.0, 0.0]);
    assert!(grad.row(2).iter().any(|v| *v != 0.0));
    let _ = rng.gen::<u8>();
}
