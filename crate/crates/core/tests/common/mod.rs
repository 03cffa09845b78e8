#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setad::encoder::ModelParams;
use setad::numcore::Matrix;
use setad::trainer::mae_loss;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Uniform on `[-hi, -lo] ∪ [lo, hi]`, keeping clear of kinks at zero.
pub fn away_from_zero(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Error of an analytic gradient entry against its numeric estimate:
/// absolute below 1e-3 in magnitude, relative otherwise.
pub fn grad_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-3 {
        // scaled so the 1e-6 absolute tolerance maps onto the 1e-4 bound
        (analytic - numeric).abs() * 100.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Central difference of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &Matrix, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let mut p = x.clone();
            p.set(i, j, x.get(i, j) + FD_STEP);
            let up = f(&p);
            p.set(i, j, x.get(i, j) - FD_STEP);
            let down = f(&p);
            g.set(i, j, (up - down) / (2.0 * FD_STEP));
        }
    }
    g
}

pub fn max_grad_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| grad_error(a, n))
        .fold(0.0, f64::max)
}

/// MAE of a single-set prediction.
pub fn set_mae(model: &ModelParams, set: &Matrix, grade: usize) -> f64 {
    mae_loss(&[model.score_set(set).unwrap()], &[grade]).unwrap()
}

/// Permutes the rows of `m`.
pub fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    m.select_rows(perm)
}
