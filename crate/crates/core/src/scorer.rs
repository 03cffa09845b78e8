//! Context-calibrated point scoring.
//!
//! A test point is placed in `n_C` random contexts of `k - 1` points drawn
//! from the unlabeled pool. In each context its set score is compared with
//! the mean score of reference points from the same pool placed in that
//! context; the calibrated score is the mean of these differences. The
//! contexts and their reference baselines do not depend on the test point,
//! so a [`ContextCache`] is built once and shared by every point scored in
//! a run.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::{self, EvalResult};
use crate::numcore::Matrix;
use crate::trainer::Hyperparams;

/// Anything that maps a `k x d` set to a scalar.
pub trait SetScorer: Sync {
    fn input_dim(&self) -> usize;
    fn score_set(&self, set: &Matrix) -> Result<f64>;

    /// Identifier recorded in score reports.
    fn fingerprint(&self) -> String {
        String::from("unknown")
    }
}

impl SetScorer for ModelParams {
    fn input_dim(&self) -> usize {
        self.meta.d
    }

    fn score_set(&self, set: &Matrix) -> Result<f64> {
        ModelParams::score_set(self, set)
    }

    fn fingerprint(&self) -> String {
        ModelParams::fingerprint(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ReferenceMode {
    /// `n_references` points drawn with replacement from the pool minus the
    /// context members.
    MonteCarlo { n_references: usize },
    /// Every pool point, giving the exact pool expectation.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub k: usize,
    pub n_contexts: usize,
    pub references: ReferenceMode,
    pub seed: u64,
    pub execution: Execution,
}

impl ScoringConfig {
    pub fn from_hyperparams(hp: &Hyperparams) -> Self {
        Self {
            k: hp.k,
            n_contexts: hp.n_contexts,
            references: ReferenceMode::MonteCarlo {
                n_references: hp.n_references,
            },
            seed: hp.score_seed,
            execution: hp.execution,
        }
    }

    fn validate(&self, pool: &Matrix) -> Result<()> {
        if self.k == 0 || self.n_contexts == 0 {
            return Err(Error::Config(
                "k and the number of contexts must be at least 1".into(),
            ));
        }
        let needed = match self.references {
            ReferenceMode::MonteCarlo { n_references: 0 } => {
                return Err(Error::Config("n_references must be at least 1".into()))
            }
            ReferenceMode::MonteCarlo { .. } => self.k,
            ReferenceMode::Exhaustive => self.k.saturating_sub(1).max(1),
        };
        if pool.rows() < needed {
            return Err(Error::Config(format!(
                "unlabeled pool has {} points; contexts of {} plus references need {needed}",
                pool.rows(),
                self.k - 1
            )));
        }
        Ok(())
    }
}

/// `k - 1` distinct pool indices forming a shared background set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    indices: Vec<usize>,
}

impl Context {
    pub fn new(indices: Vec<usize>, pool_size: usize, k: usize) -> Result<Self> {
        if indices.len() + 1 != k {
            return Err(Error::Config(format!(
                "context for k={k} needs {} points, got {}",
                k.saturating_sub(1),
                indices.len()
            )));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("context indices must be distinct".into()));
        }
        if sorted.last().is_some_and(|&i| i >= pool_size) {
            return Err(Error::Config(format!(
                "context index out of range for pool of {pool_size}"
            )));
        }
        Ok(Self { indices })
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, pool_size: usize, k: usize) -> Self {
        Self {
            indices: index::sample(rng, pool_size, k - 1).into_vec(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }
}

fn check_point(model: &impl SetScorer, x: &[f64], pool: &Matrix) -> Result<()> {
    let d = model.input_dim();
    if x.len() != d {
        return Err(Error::dimension("score_point", (1, x.len()), (1, d)));
    }
    if pool.cols() != d {
        return Err(Error::dimension("score_point", pool.shape(), (pool.rows(), d)));
    }
    Ok(())
}

/// The point followed by the context members, as a `k x d` set.
fn assemble(x: &[f64], context: &Context, pool: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(x.len() * (context.indices.len() + 1));
    data.extend_from_slice(x);
    for &i in &context.indices {
        data.extend_from_slice(pool.row(i));
    }
    Matrix::new(context.indices.len() + 1, x.len(), data).expect("rows share pool width")
}

/// Set score of `x` placed in `context`.
pub fn raw_context_score(
    model: &impl SetScorer,
    x: &[f64],
    context: &Context,
    pool: &Matrix,
) -> Result<f64> {
    check_point(model, x, pool)?;
    model.score_set(&assemble(x, context, pool))
}

fn draw_references<R: Rng + ?Sized>(
    rng: &mut R,
    context: &Context,
    pool_size: usize,
    mode: ReferenceMode,
) -> Vec<usize> {
    match mode {
        ReferenceMode::Exhaustive => (0..pool_size).collect(),
        ReferenceMode::MonteCarlo { n_references } => (0..n_references)
            .map(|_| loop {
                let j = rng.random_range(0..pool_size);
                if !context.contains(j) {
                    break j;
                }
            })
            .collect(),
    }
}

fn baseline_of(
    model: &impl SetScorer,
    context: &Context,
    references: &[usize],
    pool: &Matrix,
) -> Result<f64> {
    let mut sum = 0.0;
    for &j in references {
        sum += raw_context_score(model, pool.row(j), context, pool)?;
    }
    Ok(sum / references.len() as f64)
}

/// Mean set score of reference peers placed in `context`.
pub fn reference_baseline<R: Rng + ?Sized>(
    model: &impl SetScorer,
    context: &Context,
    pool: &Matrix,
    mode: ReferenceMode,
    rng: &mut R,
) -> Result<f64> {
    if pool.rows() <= context.indices.len() && matches!(mode, ReferenceMode::MonteCarlo { .. }) {
        return Err(Error::Config(format!(
            "pool of {} points leaves no references outside a context of {}",
            pool.rows(),
            context.indices.len()
        )));
    }
    let refs = draw_references(rng, context, pool.rows(), mode);
    if refs.is_empty() {
        return Err(Error::Config("no reference points".into()));
    }
    baseline_of(model, context, &refs, pool)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedScore {
    pub id: usize,
    pub score: f64,
    pub n_contexts: usize,
    pub n_references: Option<usize>,
    /// Per-context normalized scores; the score is their mean.
    pub per_context: Vec<f64>,
}

/// Contexts and their reference baselines for one scoring run.
#[derive(Debug, Clone)]
pub struct ContextCache {
    config: ScoringConfig,
    contexts: Vec<Context>,
    baselines: Vec<f64>,
}

impl ContextCache {
    /// Samples every context and its references from a generator seeded
    /// with `config.seed`, then evaluates the baselines.
    pub fn build(model: &impl SetScorer, pool: &Matrix, config: &ScoringConfig) -> Result<Self> {
        config.validate(pool)?;
        if pool.cols() != model.input_dim() {
            return Err(Error::dimension(
                "context_cache",
                pool.shape(),
                (pool.rows(), model.input_dim()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut contexts = Vec::with_capacity(config.n_contexts);
        let mut references = Vec::with_capacity(config.n_contexts);
        for _ in 0..config.n_contexts {
            let c = Context::sample(&mut rng, pool.rows(), config.k);
            references.push(draw_references(&mut rng, &c, pool.rows(), config.references));
            contexts.push(c);
        }
        let baselines = config.execution.try_map(contexts.len(), |i| {
            let b = baseline_of(model, &contexts[i], &references[i], pool)?;
            if !b.is_finite() {
                return Err(Error::Score(format!("baseline of context {i} is {b}")));
            }
            Ok(b)
        })?;
        Ok(Self {
            config: config.clone(),
            contexts,
            baselines,
        })
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn baselines(&self) -> &[f64] {
        &self.baselines
    }

    pub fn config(&self) -> &ScoringConfig {
        &self.config
    }

    pub fn score(
        &self,
        model: &impl SetScorer,
        x: &[f64],
        pool: &Matrix,
        id: usize,
    ) -> Result<CalibratedScore> {
        let mut per_context = Vec::with_capacity(self.contexts.len());
        for (i, (c, b)) in self.contexts.iter().zip(&self.baselines).enumerate() {
            let s = raw_context_score(model, x, c, pool)?;
            if !s.is_finite() {
                return Err(Error::Score(format!(
                    "point {id} scored {s} in context {i} (members {:?})",
                    c.indices
                )));
            }
            per_context.push(s - b);
        }
        let sum = per_context.iter().fold(0.0, |acc, v| acc + v);
        Ok(CalibratedScore {
            id,
            score: sum / per_context.len() as f64,
            n_contexts: self.contexts.len(),
            n_references: match self.config.references {
                ReferenceMode::MonteCarlo { n_references } => Some(n_references),
                ReferenceMode::Exhaustive => None,
            },
            per_context,
        })
    }
}

/// Calibrated score of a single point.
pub fn score_point(
    model: &impl SetScorer,
    x: &[f64],
    pool: &Matrix,
    config: &ScoringConfig,
) -> Result<CalibratedScore> {
    check_point(model, x, pool)?;
    ContextCache::build(model, pool, config)?.score(model, x, pool, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model_hash: String,
    pub score_seed: u64,
    pub train_seed: Option<u64>,
    pub k: usize,
    pub n_contexts: usize,
    pub references: ReferenceMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub row: usize,
    pub score: f64,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub meta: ReportMeta,
    pub records: Vec<ScoreRecord>,
    pub eval: Option<EvalResult>,
}

impl ScoreReport {
    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            row: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

/// Scores every row of `test` against one shared context cache. Metrics
/// are attached when labels with both classes are supplied.
pub fn score_dataset(
    model: &impl SetScorer,
    test: &Matrix,
    labels: Option<&[bool]>,
    pool: &Matrix,
    config: &ScoringConfig,
) -> Result<ScoreReport> {
    if let Some(l) = labels {
        if l.len() != test.rows() {
            return Err(Error::dimension("score_dataset", (test.rows(), 1), (l.len(), 1)));
        }
    }
    if test.rows() > 0 && test.cols() != model.input_dim() {
        return Err(Error::dimension(
            "score_dataset",
            test.shape(),
            (test.rows(), model.input_dim()),
        ));
    }
    let meta = ReportMeta {
        model_hash: model.fingerprint(),
        score_seed: config.seed,
        train_seed: None,
        k: config.k,
        n_contexts: config.n_contexts,
        references: config.references,
    };
    if test.rows() == 0 {
        return Ok(ScoreReport {
            meta,
            records: Vec::new(),
            eval: None,
        });
    }
    let cache = ContextCache::build(model, pool, config)?;
    let scores = config
        .execution
        .try_map(test.rows(), |i| cache.score(model, test.row(i), pool, i))?;
    let records: Vec<ScoreRecord> = scores
        .iter()
        .map(|s| ScoreRecord {
            row: s.id,
            score: s.score,
            label: labels.map(|l| u8::from(l[s.id])),
        })
        .collect();
    let eval = match labels {
        Some(l) if l.iter().any(|&v| v) && l.iter().any(|&v| !v) => {
            let s: Vec<f64> = records.iter().map(|r| r.score).collect();
            Some(metrics::evaluate(&s, l)?)
        }
        Some(_) => {
            log::warn!("test labels contain a single class; metrics skipped");
            None
        }
        None => None,
    };
    Ok(ScoreReport {
        meta,
        records,
        eval,
    })
}
