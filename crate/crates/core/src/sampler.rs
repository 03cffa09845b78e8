//! Graded training sets: `k` points mixing `n_A` labeled anomalies with
//! `k - n_A` unlabeled points, labeled with the grade `n_A`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Unlabeled,
    Anomaly,
}

/// Origin of one point in a sampled set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Member {
    pub source: Source,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetSample {
    pub members: Vec<Member>,
    pub grade: usize,
    /// `k x d`, row `i` is the point described by `members[i]`.
    pub set: Matrix,
}

/// Sampling distribution over grades `0..=max_grade`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradeMix {
    weights: Vec<f64>,
}

impl Default for GradeMix {
    fn default() -> Self {
        Self::uniform(2)
    }
}

impl GradeMix {
    pub fn uniform(max_grade: usize) -> Self {
        let n = max_grade + 1;
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    /// Explicit weights indexed by grade; must be non-negative and sum to 1.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "grade weights must be non-negative and finite, got {weights:?}"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "grade weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { weights })
    }

    /// A single grade with probability one.
    pub fn degenerate(grade: usize) -> Self {
        let mut weights = vec![0.0; grade + 1];
        weights[grade] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn max_grade(&self) -> usize {
        self.weights.len() - 1
    }

    /// Drops grades above `max_grade` and renormalizes.
    pub fn restrict(&self, max_grade: usize) -> Result<Self> {
        if max_grade >= self.max_grade() {
            return Ok(self.clone());
        }
        let kept = &self.weights[..=max_grade];
        let sum: f64 = kept.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Config(format!(
                "no grade at or below {max_grade} has positive weight"
            )));
        }
        Ok(Self {
            weights: kept.iter().map(|w| w / sum).collect(),
        })
    }

    fn sampler(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(&self.weights)
            .map_err(|e| Error::Config(format!("invalid grade mix: {e}")))
    }
}

fn check_pools(unlabeled: &Matrix, anomalies: &Matrix) -> Result<()> {
    if anomalies.rows() > 0 && unlabeled.rows() > 0 && unlabeled.cols() != anomalies.cols() {
        return Err(Error::dimension(
            "sample_set",
            unlabeled.shape(),
            anomalies.shape(),
        ));
    }
    Ok(())
}

/// Draws one set with exactly `n_anomalies` labeled anomalies. Points are
/// drawn without replacement within each pool.
pub fn sample_set<R: Rng + ?Sized>(
    unlabeled: &Matrix,
    anomalies: &Matrix,
    k: usize,
    n_anomalies: usize,
    rng: &mut R,
) -> Result<SetSample> {
    check_pools(unlabeled, anomalies)?;
    if n_anomalies > k {
        return Err(Error::Sampling(format!(
            "grade {n_anomalies} exceeds set size {k}"
        )));
    }
    if n_anomalies > anomalies.rows() {
        return Err(Error::Sampling(format!(
            "labeled-anomaly pool has {} points, {n_anomalies} requested",
            anomalies.rows()
        )));
    }
    let n_unlabeled = k - n_anomalies;
    if n_unlabeled > unlabeled.rows() {
        return Err(Error::Sampling(format!(
            "unlabeled pool has {} points, {n_unlabeled} requested",
            unlabeled.rows()
        )));
    }
    let mut members = Vec::with_capacity(k);
    for i in index::sample(rng, anomalies.rows(), n_anomalies) {
        members.push(Member {
            source: Source::Anomaly,
            index: i,
        });
    }
    for i in index::sample(rng, unlabeled.rows(), n_unlabeled) {
        members.push(Member {
            source: Source::Unlabeled,
            index: i,
        });
    }
    let d = unlabeled.cols().max(anomalies.cols());
    let mut data = Vec::with_capacity(k * d);
    for m in &members {
        let pool = match m.source {
            Source::Anomaly => anomalies,
            Source::Unlabeled => unlabeled,
        };
        data.extend_from_slice(pool.row(m.index));
    }
    Ok(SetSample {
        members,
        grade: n_anomalies,
        set: Matrix::new(k, d, data)?,
    })
}

/// Draws `batch_size` independent sets, each with a grade drawn from `mix`.
pub fn sample_batch<R: Rng + ?Sized>(
    unlabeled: &Matrix,
    anomalies: &Matrix,
    k: usize,
    batch_size: usize,
    mix: &GradeMix,
    rng: &mut R,
) -> Result<Vec<SetSample>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let dist = mix.sampler()?;
    (0..batch_size)
        .map(|_| {
            let grade = dist.sample(rng);
            sample_set(unlabeled, anomalies, k, grade, rng)
        })
        .collect()
}

/// Owns the pools, set size, effective grade mix and random stream of one
/// training run.
#[derive(Debug)]
pub struct SetSampler<'a, R> {
    unlabeled: &'a Matrix,
    anomalies: &'a Matrix,
    k: usize,
    mix: GradeMix,
    rng: R,
}

impl<'a, R: Rng> SetSampler<'a, R> {
    /// Grades that cannot be formed (more than the available labeled
    /// anomalies, or more than `k`) are removed from `mix` with a warning.
    pub fn new(
        unlabeled: &'a Matrix,
        anomalies: &'a Matrix,
        k: usize,
        mix: &GradeMix,
        rng: R,
    ) -> Result<Self> {
        check_pools(unlabeled, anomalies)?;
        if k == 0 {
            return Err(Error::Config("set size k must be at least 1".into()));
        }
        let cap = anomalies.rows().min(k);
        let effective = mix.restrict(cap)?;
        if effective != *mix {
            log::warn!(
                "only {} labeled anomalies and k={k}: grades above {cap} dropped, mix now {:?}",
                anomalies.rows(),
                effective.weights()
            );
        }
        let max_normals = k - effective
            .weights()
            .iter()
            .position(|w| *w > 0.0)
            .unwrap_or(0);
        if max_normals > unlabeled.rows() {
            return Err(Error::Sampling(format!(
                "unlabeled pool has {} points but sets need up to {max_normals}",
                unlabeled.rows()
            )));
        }
        Ok(Self {
            unlabeled,
            anomalies,
            k,
            mix: effective,
            rng,
        })
    }

    pub fn mix(&self) -> &GradeMix {
        &self.mix
    }

    pub fn batch(&mut self, batch_size: usize) -> Result<Vec<SetSample>> {
        sample_batch(
            self.unlabeled,
            self.anomalies,
            self.k,
            batch_size,
            &self.mix,
            &mut self.rng,
        )
    }
}
