mod common;

use common::*;
use rand::Rng;
use setad::encoder::ModelParams;
use setad::numcore::Matrix;
use setad::scorer::{score_dataset, score_point, ReferenceMode, ScoringConfig, SetScorer};
use setad::{Execution, Result};

/// Set score is the sum of a fixed per-point contribution.
struct Additive {
    w: Vec<f64>,
}

impl Additive {
    fn contribution(&self, x: &[f64]) -> f64 {
        let dot: f64 = self.w.iter().zip(x).map(|(a, b)| a * b).sum();
        dot.tanh() + 0.3 * x[0] * x[0]
    }
}

impl SetScorer for Additive {
    fn input_dim(&self) -> usize {
        self.w.len()
    }

    fn score_set(&self, set: &Matrix) -> Result<f64> {
        Ok((0..set.rows()).map(|r| self.contribution(set.row(r))).sum())
    }
}

struct Constant(f64, usize);

impl SetScorer for Constant {
    fn input_dim(&self) -> usize {
        self.1
    }

    fn score_set(&self, _: &Matrix) -> Result<f64> {
        Ok(self.0)
    }
}

fn config(n_contexts: usize, references: ReferenceMode, seed: u64) -> ScoringConfig {
    ScoringConfig {
        k: 8,
        n_contexts,
        references,
        seed,
        execution: Execution::Sequential,
    }
}

const MC: ReferenceMode = ReferenceMode::MonteCarlo { n_references: 30 };

fn pool_stats(stub: &Additive, pool: &Matrix) -> (f64, f64) {
    let c: Vec<f64> = (0..pool.rows()).map(|r| stub.contribution(pool.row(r))).collect();
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64;
    (mean, var.sqrt())
}

#[test]
fn constant_model_cancels_exactly() {
    let mut g = rng(50);
    let pool = uniform(&mut g, 300, 4, -2.0, 2.0);
    let model = Constant(0.7, 4);
    let test = uniform(&mut g, 100, 4, -3.0, 3.0);
    let report = score_dataset(&model, &test, None, &pool, &config(60, MC, 3)).unwrap();
    for r in &report.records {
        assert!(r.score.abs() < 1e-12);
    }
}

#[test]
fn additive_oracle_exhaustive_is_exact() {
    let mut g = rng(51);
    let pool = uniform(&mut g, 120, 3, -2.0, 2.0);
    let stub = Additive {
        w: vec![0.8, -0.4, 1.1],
    };
    let (mean, _) = pool_stats(&stub, &pool);
    let test = uniform(&mut g, 100, 3, -3.0, 3.0);
    let report = score_dataset(&stub, &test, None, &pool, &config(5, ReferenceMode::Exhaustive, 0)).unwrap();
    for r in &report.records {
        let target = stub.contribution(test.row(r.row)) - mean;
        assert!((r.score - target).abs() < 1e-10, "{} vs {target}", r.score);
    }
}

#[test]
fn additive_oracle_monte_carlo_within_three_sigma() {
    let mut g = rng(52);
    let pool = uniform(&mut g, 1000, 3, -2.0, 2.0);
    let stub = Additive {
        w: vec![0.8, -0.4, 1.1],
    };
    let (mean, sigma) = pool_stats(&stub, &pool);
    let band = 3.0 * sigma / ((60 * 30) as f64).sqrt();
    let mut inside = 0;
    for i in 0..100 {
        let x = uniform(&mut g, 1, 3, -3.0, 3.0);
        let s = score_point(&stub, x.row(0), &pool, &config(60, MC, 1000 + i)).unwrap();
        if (s.score - (stub.contribution(x.row(0)) - mean)).abs() <= band {
            inside += 1;
        }
    }
    assert!(inside >= 95, "{inside}/100 inside the band");
}

#[test]
fn additive_oracle_over_random_stubs() {
    let mut g = rng(53);
    let pool = uniform(&mut g, 400, 3, -2.0, 2.0);
    for i in 0..100 {
        let stub = Additive {
            w: (0..3).map(|_| g.random_range(-1.5..1.5)).collect(),
        };
        let (mean, sigma) = pool_stats(&stub, &pool);
        let x = uniform(&mut g, 1, 3, -2.0, 2.0);
        let s = score_point(&stub, x.row(0), &pool, &config(60, MC, i)).unwrap();
        let err = (s.score - (stub.contribution(x.row(0)) - mean)).abs();
        assert!(err < 5.0 * sigma / 60f64.sqrt(), "stub {i}: {err}");
    }
}

fn repeated_scores(model: &ModelParams, x: &[f64], pool: &Matrix, n_contexts: usize, trials: u64) -> Vec<f64> {
    (0..trials)
        .map(|t| score_point(model, x, pool, &config(n_contexts, MC, 7_000 + t)).unwrap().score)
        .collect()
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn fixture() -> (ModelParams, Matrix, Vec<f64>) {
    let mut g = rng(54);
    let model = ModelParams::init(11, 5, 20, 2).unwrap();
    let pool = uniform(&mut g, 500, 5, -2.0, 2.0);
    let x = uniform(&mut g, 1, 5, -2.0, 2.0).row(0).to_vec();
    (model, pool, x)
}

#[test]
fn variance_shrinks_with_context_count() {
    let (model, pool, x) = fixture();
    let v1 = variance(&repeated_scores(&model, &x, &pool, 1, 500));
    let v16 = variance(&repeated_scores(&model, &x, &pool, 16, 500));
    let ratio = v16 / v1;
    assert!((1.0 / 32.0..=1.0 / 8.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn deviation_decreases_monotonically_with_budget() {
    let (model, pool, x) = fixture();
    let mad = |n_c| {
        let s = repeated_scores(&model, &x, &pool, n_c, 200);
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|v| (v - m).abs()).sum::<f64>() / s.len() as f64
    };
    let m: Vec<f64> = [1, 4, 16, 64].into_iter().map(mad).collect();
    assert!(m.windows(2).all(|w| w[1] < w[0]), "{m:?}");
}

#[test]
fn shared_cache_makes_rows_independent_of_order() {
    let (model, pool, _) = fixture();
    let mut g = rng(55);
    let test = uniform(&mut g, 30, 5, -2.0, 2.0);
    let cfg = config(8, MC, 2);
    let a = score_dataset(&model, &test, None, &pool, &cfg).unwrap();
    let rev: Vec<usize> = (0..30).rev().collect();
    let b = score_dataset(&model, &test.select_rows(&rev), None, &pool, &cfg).unwrap();
    for (i, r) in a.records.iter().enumerate() {
        assert_eq!(r.score, b.records[29 - i].score);
    }
    let single = score_point(&model, test.row(4), &pool, &cfg).unwrap();
    assert_eq!(single.score, a.records[4].score);
}

#[test]
fn parallel_scoring_matches_sequential() {
    let (model, pool, _) = fixture();
    let mut g = rng(56);
    let test = uniform(&mut g, 40, 5, -2.0, 2.0);
    let seq = config(12, MC, 4);
    let par = ScoringConfig {
        execution: Execution::Parallel,
        ..seq.clone()
    };
    assert_eq!(
        score_dataset(&model, &test, None, &pool, &seq).unwrap(),
        score_dataset(&model, &test, None, &pool, &par).unwrap()
    );
}
