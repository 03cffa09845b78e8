mod common;

use common::*;
use rand::Rng;
use setad::encoder::{ModelMeta, ModelParams, Pooling};
use setad::numcore::{Matrix, Ops, Tape, Var};
use setad::sampler::SetSample;
use setad::trainer::{batch_gradient, LossKind};
use setad::{Execution, Result};

type Build = fn(&mut Tape, &[Var]) -> Result<Var>;

/// Reduces `out` to a scalar through fixed random row and column weights.
fn project(tape: &mut Tape, out: &Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.value(out)?.shape();
    let mut g = rng(seed);
    let left = tape.constant(uniform(&mut g, 1, r, -1.0, 1.0));
    let right = tape.constant(uniform(&mut g, c, 1, -1.0, 1.0));
    let lo = tape.matmul(&left, out)?;
    tape.matmul(&lo, &right)
}

fn check_op(name: &str, inputs: Vec<Matrix>, build: Build) {
    let eval = |inputs: &[Matrix]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        let loss = project(&mut tape, &out, 99).unwrap();
        tape.value(&loss).unwrap().get(0, 0)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = project(&mut tape, &out, 99).unwrap();
    let grads = tape.backward(&loss).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let numeric = numeric_gradient(&inputs[i], |p| {
            let mut xs = inputs.clone();
            xs[i] = p.clone();
            eval(&xs)
        });
        let err = max_grad_error(grads.get(v).unwrap(), &numeric);
        assert!(err < 1e-4, "{name} input {i}: max error {err:e}");
    }
}

#[test]
fn matmul_gradient_random_3x4_by_4x2() {
    let mut g = rng(1);
    check_op(
        "matmul",
        vec![uniform(&mut g, 3, 4, -2.0, 2.0), uniform(&mut g, 4, 2, -2.0, 2.0)],
        |t, v| t.matmul(&v[0], &v[1]),
    );
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut g = rng(2);
    let a = away_from_zero(&mut g, 3, 4, 0.01, 2.0);
    let b = uniform(&mut g, 3, 4, -2.0, 2.0);
    check_op("add", vec![a.clone(), b.clone()], |t, v| t.add(&v[0], &v[1]));
    check_op("scale", vec![b.clone()], |t, v| t.scale(&v[0], -1.7));
    check_op("relu", vec![a.clone()], |t, v| t.relu(&v[0]));
    check_op("abs", vec![a.clone()], |t, v| t.abs(&v[0]));
    check_op("transpose", vec![b.clone()], |t, v| t.transpose(&v[0]));
    check_op("softmax_rows", vec![b.clone()], |t, v| t.softmax_rows(&v[0]));
    check_op("sum_rows", vec![b.clone()], |t, v| t.sum_rows(&v[0]));
    check_op("sum_cols", vec![b.clone()], |t, v| t.sum_cols(&v[0]));
    check_op("max_rows", vec![b.clone()], |t, v| t.max_rows(&v[0]));
    check_op("mean", vec![b.clone()], |t, v| t.mean(&v[0]));
    check_op("slice_cols", vec![b.clone()], |t, v| t.slice_cols(&v[0], 1, 2));
    check_op("concat_cols", vec![a, b], |t, v| t.concat_cols(&[v[0], v[1], v[0]]));
}

#[test]
fn composed_ops_gradient() {
    for seed in 0..20 {
        let mut g = rng(100 + seed);
        let x = uniform(&mut g, 4, 3, -2.0, 2.0);
        let w = uniform(&mut g, 3, 5, -2.0, 2.0);
        check_op("composition", vec![x, w], |t, v| {
            let h = t.matmul(&v[0], &v[1])?;
            let s = t.softmax_rows(&h)?;
            let ht = t.transpose(&h)?;
            let a = t.matmul(&s, &ht)?;
            let r = t.relu(&a)?;
            let m = t.max_rows(&r)?;
            t.concat_cols(&[m, m])
        });
    }
}

/// Loss gradient of every parameter block against central differences.
fn encoder_max_error(model: &ModelParams, set: &Matrix, grade: usize) -> f64 {
    let sample = SetSample {
        members: Vec::new(),
        grade,
        set: set.clone(),
    };
    let (_, grads) = batch_gradient(model, &[sample], LossKind::Mae, Execution::Sequential).unwrap();
    let names: Vec<String> = model.blocks().into_iter().map(|b| b.name).collect();
    let mut worst = 0.0f64;
    for (bi, analytic) in grads.iter().enumerate() {
        let base = model.blocks()[bi].value.clone();
        let numeric = numeric_gradient(&base, |p| {
            let mut m = model.clone();
            *m.blocks_mut()[bi] = p.clone();
            set_mae(&m, set, grade)
        });
        let err = max_grad_error(analytic, &numeric);
        assert!(err < 1e-4, "block {}: max error {err:e}", names[bi]);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn encoder_every_block_k3_d4() {
    let mut model = ModelParams::init(7, 4, 6, 2).unwrap();
    let mut g = rng(8);
    // nonzero biases so their gradients are exercised away from the init point
    *model.blocks_mut()[1] = uniform(&mut g, 1, 6, -0.5, 0.5);
    let set = uniform(&mut g, 3, 4, -2.0, 2.0);
    let grade = if model.score_set(&set).unwrap() > 1.0 { 0 } else { 2 };
    encoder_max_error(&model, &set, grade);
}

#[test]
fn encoder_variants_max_pooling_and_depth() {
    let mut g = rng(9);
    for (pooling, depth) in [(Pooling::Max, 1), (Pooling::Sum, 2), (Pooling::Max, 2)] {
        let meta = ModelMeta {
            depth,
            pooling,
            ..ModelMeta::new(4, 6, 3)
        };
        let model = ModelParams::init_with(g.random(), meta).unwrap();
        let set = uniform(&mut g, 5, 4, -2.0, 2.0);
        encoder_max_error(&model, &set, 3);
    }
}

#[test]
fn encoder_random_instances() {
    let mut g = rng(10);
    for _ in 0..10 {
        let d = g.random_range(1..=8);
        let k = g.random_range(1..=6);
        let model = ModelParams::init(g.random(), d, 4, 2).unwrap();
        let set = uniform(&mut g, k, d, -2.0, 2.0);
        encoder_max_error(&model, &set, g.random_range(0..=2));
    }
}
