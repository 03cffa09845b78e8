//! Graded-regression training with RMSProp.
//!
//! Each step draws a fresh batch of graded sets, regresses the set score
//! onto the grade, and applies one RMSProp update. The epoch whose mean
//! training loss is lowest provides the returned checkpoint.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{ModelMeta, ModelParams, Pooling};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numcore::{Matrix, Ops, Tape, Var};
use crate::sampler::{GradeMix, SetSample, SetSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(format!("unknown loss '{other}'")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        })
    }
}

/// Model, optimizer and scoring settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Set size.
    pub k: usize,
    pub d_h: usize,
    pub heads: usize,
    pub depth: usize,
    pub pooling: Pooling,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub rmsprop_smoothing: f64,
    pub rmsprop_epsilon: f64,
    /// Largest grade in the default uniform mix.
    pub max_grade: usize,
    /// Explicit grade weights, overriding the uniform mix when set.
    pub grade_weights: Option<Vec<f64>>,
    pub loss: LossKind,
    /// Contexts per scoring run.
    pub n_contexts: usize,
    /// Reference points per context.
    pub n_references: usize,
    pub seed: u64,
    pub score_seed: u64,
    /// Does not affect results, only how work is scheduled.
    pub execution: Execution,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: 8,
            d_h: 20,
            heads: 2,
            depth: 1,
            pooling: Pooling::Sum,
            epochs: 20,
            batches_per_epoch: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 0.1,
            rmsprop_smoothing: 0.99,
            rmsprop_epsilon: 1e-8,
            max_grade: 2,
            grade_weights: None,
            loss: LossKind::Mae,
            n_contexts: 60,
            n_references: 30,
            seed: 0,
            score_seed: 1,
            execution: Execution::default(),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k", self.k),
            ("d_h", self.d_h),
            ("heads", self.heads),
            ("depth", self.depth),
            ("batches_per_epoch", self.batches_per_epoch),
            ("batch_size", self.batch_size),
            ("n_contexts", self.n_contexts),
            ("n_references", self.n_references),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(self.rmsprop_smoothing > 0.0 && self.rmsprop_smoothing < 1.0) {
            return Err(Error::Config("rmsprop_smoothing must lie in (0, 1)".into()));
        }
        if !(self.rmsprop_epsilon > 0.0) {
            return Err(Error::Config("rmsprop_epsilon must be positive".into()));
        }
        self.grade_mix()?;
        Ok(())
    }

    pub fn grade_mix(&self) -> Result<GradeMix> {
        match &self.grade_weights {
            Some(w) => GradeMix::new(w.clone()),
            None => Ok(GradeMix::uniform(self.max_grade)),
        }
    }

    pub fn model_meta(&self, d: usize) -> ModelMeta {
        ModelMeta {
            d,
            d_h: self.d_h,
            heads: self.heads,
            depth: self.depth,
            pooling: self.pooling,
        }
    }
}

/// Mean absolute error between predictions and integer grades.
pub fn mae_loss(predictions: &[f64], grades: &[usize]) -> Result<f64> {
    check_batch(predictions, grades)?;
    let sum = predictions
        .iter()
        .zip(grades)
        .fold(0.0, |acc, (p, &y)| acc + (p - y as f64).abs());
    Ok(sum / predictions.len() as f64)
}

pub fn mse_loss(predictions: &[f64], grades: &[usize]) -> Result<f64> {
    check_batch(predictions, grades)?;
    let sum = predictions.iter().zip(grades).fold(0.0, |acc, (p, &y)| {
        let e = p - y as f64;
        acc + e * e
    });
    Ok(sum / predictions.len() as f64)
}

fn check_batch(predictions: &[f64], grades: &[usize]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::Usage("loss over an empty batch".into()));
    }
    if predictions.len() != grades.len() {
        return Err(Error::dimension(
            "loss",
            (1, predictions.len()),
            (1, grades.len()),
        ));
    }
    Ok(())
}

/// Records the batch loss over taped `1 x 1` predictions.
pub fn loss_taped(tape: &mut Tape, predictions: &[Var], grades: &[usize], kind: LossKind) -> Result<Var> {
    if predictions.is_empty() {
        return Err(Error::Usage("loss over an empty batch".into()));
    }
    if predictions.len() != grades.len() {
        return Err(Error::dimension(
            "loss",
            (1, predictions.len()),
            (1, grades.len()),
        ));
    }
    let preds = tape.concat_cols(predictions)?;
    let targets = tape.constant(Matrix::row_vector(
        grades.iter().map(|&g| -(g as f64)).collect(),
    ));
    let diff = tape.add(&preds, &targets)?;
    match kind {
        LossKind::Mae => {
            let a = tape.abs(&diff)?;
            tape.mean(&a)
        }
        LossKind::Mse => {
            let t = tape.transpose(&diff)?;
            let sq = tape.matmul(&diff, &t)?;
            tape.scale(&sq, 1.0 / grades.len() as f64)
        }
    }
}

/// Loss share and parameter gradients contributed by one set of a batch of
/// `batch_len` sets.
fn set_gradient(
    model: &ModelParams,
    sample: &SetSample,
    batch_len: usize,
    kind: LossKind,
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let pred = model.score_set_taped(&mut tape, &params, &sample.set)?;
    let target = tape.constant(Matrix::scalar(-(sample.grade as f64)));
    let diff = tape.add(&pred, &target)?;
    let err = match kind {
        LossKind::Mae => tape.abs(&diff)?,
        LossKind::Mse => tape.matmul(&diff, &diff)?,
    };
    let loss = tape.scale(&err, 1.0 / batch_len as f64)?;
    let value = tape.value(&loss)?.get(0, 0);
    let mut grads = tape.backward(&loss)?;
    Ok((value, params.collect(&mut grads)?))
}

/// Batch loss and its gradient. Sets are differentiated independently
/// (possibly in parallel) and reduced in batch order.
pub fn batch_gradient(
    model: &ModelParams,
    batch: &[SetSample],
    kind: LossKind,
    exec: Execution,
) -> Result<(f64, Vec<Matrix>)> {
    if batch.is_empty() {
        return Err(Error::Usage("gradient of an empty batch".into()));
    }
    let parts = exec.try_map(batch.len(), |i| set_gradient(model, &batch[i], batch.len(), kind))?;
    let mut it = parts.into_iter();
    let (mut loss, mut grads) = it.next().expect("non-empty batch");
    for (l, g) in it {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    Ok((loss, grads))
}

/// Running mean of squared gradients, one matrix per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub mean_square: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            mean_square: params
                .blocks()
                .iter()
                .map(|b| Matrix::zeros(b.value.rows(), b.value.cols()))
                .collect(),
        }
    }
}

/// One RMSProp update with L2 weight decay folded into the gradient.
/// Biases are not decayed. Parameters are left untouched if any gradient
/// is non-finite.
pub fn rmsprop_step(
    params: &mut ModelParams,
    grads: &[Matrix],
    state: &mut OptimizerState,
    hp: &Hyperparams,
) -> Result<()> {
    let blocks = params.blocks();
    if grads.len() != blocks.len() || state.mean_square.len() != blocks.len() {
        return Err(Error::Usage(format!(
            "{} parameter blocks, {} gradients, {} optimizer slots",
            blocks.len(),
            grads.len(),
            state.mean_square.len()
        )));
    }
    let mut decays = Vec::with_capacity(blocks.len());
    for ((b, g), v) in blocks.iter().zip(grads).zip(&state.mean_square) {
        if g.shape() != b.value.shape() || v.shape() != b.value.shape() {
            return Err(Error::dimension("rmsprop_step", b.value.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::Train(format!(
                "non-finite gradient in parameter block {}",
                b.name
            )));
        }
        decays.push(if b.is_bias { 0.0 } else { hp.weight_decay });
    }
    drop(blocks);

    let rho = hp.rmsprop_smoothing;
    let lr = hp.learning_rate;
    let eps = hp.rmsprop_epsilon;
    for (((w, g), v), decay) in params
        .blocks_mut()
        .into_iter()
        .zip(grads)
        .zip(&mut state.mean_square)
        .zip(decays)
    {
        for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let g = gi + decay * *wi;
            *vi = rho * *vi + (1.0 - rho) * g * g;
            *wi -= lr * g / (vi.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose snapshot was returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// Writes a JSON-lines log: the configuration, then one record per epoch.
    pub fn write_jsonl<W: Write>(&self, hp: &Hyperparams, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &serde_json::json!({ "config": hp }))?;
        writeln!(out)?;
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e)?;
            writeln!(out)?;
        }
        Ok(())
    }

    /// Parses the epoch records of a log written by [`Self::write_jsonl`].
    pub fn read_jsonl(text: &str) -> Result<Vec<EpochRecord>> {
        text.lines()
            .enumerate()
            .skip(1)
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    row: i + 1,
                    column: e.column(),
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub log: TrainLog,
}

/// Trains a fresh model on the unlabeled pool and labeled anomalies.
pub fn train(unlabeled: &Matrix, anomalies: &Matrix, hp: &Hyperparams) -> Result<TrainOutcome> {
    hp.validate()?;
    if anomalies.rows() == 0 {
        return Err(Error::Config("training needs at least one labeled anomaly".into()));
    }
    let d = unlabeled.cols();
    let mut model = ModelParams::init_with(hp.seed, hp.model_meta(d))?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(1);
    let mut sampler = SetSampler::new(unlabeled, anomalies, hp.k, &hp.grade_mix()?, rng)?;
    let mut state = OptimizerState::new(&model);

    let mut log = TrainLog::default();
    let mut best: Option<(f64, ModelParams)> = None;
    for epoch in 1..=hp.epochs {
        let start = Instant::now();
        let mut epoch_loss = 0.0;
        for _ in 0..hp.batches_per_epoch {
            let batch = sampler.batch(hp.batch_size)?;
            let (loss, grads) = batch_gradient(&model, &batch, hp.loss, hp.execution)?;
            rmsprop_step(&mut model, &grads, &mut state, hp)?;
            epoch_loss += loss;
        }
        let mean_loss = epoch_loss / hp.batches_per_epoch as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Train(format!("epoch {epoch} loss is {mean_loss}")));
        }
        log::debug!("epoch {epoch}: mean loss {mean_loss:.6}");
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        if best.as_ref().is_none_or(|(l, _)| mean_loss < *l) {
            best = Some((mean_loss, model.clone()));
            log.best_epoch = Some(epoch);
        }
    }
    let model = best.map_or(model, |(_, m)| m);
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae_loss(&[0.0, 1.0, 2.0], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(mae_loss(&[1.0, 2.0], &[0, 0]).unwrap(), 1.5);
        assert!(mae_loss(&[], &[]).is_err());
        assert!(mae_loss(&[1.0], &[0, 1]).is_err());
        assert_eq!(mse_loss(&[1.0, 2.0], &[0, 0]).unwrap(), 2.5);
    }

    #[test]
    fn taped_mae_gradient() {
        let mut tape = Tape::new();
        let p: Vec<Var> = [2.5, -0.5, 1.0]
            .iter()
            .map(|&v| tape.leaf(Matrix::scalar(v)))
            .collect();
        let loss = loss_taped(&mut tape, &p, &[1, 0, 2], LossKind::Mae).unwrap();
        assert!((tape.value(&loss).unwrap().get(0, 0) - (1.5 + 0.5 + 1.0) / 3.0).abs() < 1e-15);
        let g = tape.backward(&loss).unwrap();
        let got: Vec<f64> = p.iter().map(|v| g.get(v).unwrap().get(0, 0)).collect();
        assert_eq!(got, vec![1.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0]);
    }

    fn hp_for_step(weight_decay: f64) -> Hyperparams {
        Hyperparams {
            weight_decay,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn rmsprop_first_step_magnitude() {
        let mut p = ModelParams::init(1, 2, 2, 1).unwrap();
        let before = p.clone();
        let grads: Vec<Matrix> = p
            .blocks()
            .iter()
            .map(|b| Matrix::filled(b.value.rows(), b.value.cols(), 1.0))
            .collect();
        let mut state = OptimizerState::new(&p);
        rmsprop_step(&mut p, &grads, &mut state, &hp_for_step(0.0)).unwrap();
        for v in &state.mean_square {
            for x in v.data() {
                assert!((x - 0.01).abs() < 1e-15);
            }
        }
        for (a, b) in before.blocks().iter().zip(p.blocks().iter()) {
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                let step = x - y;
                assert!((step - 1e-3 / (0.1 + 1e-8)).abs() < 1e-15, "{step}");
            }
        }
    }

    #[test]
    fn rmsprop_zero_gradient_fixed_point() {
        let mut p = ModelParams::init(1, 3, 4, 2).unwrap();
        let before = p.clone();
        let grads: Vec<Matrix> = p
            .blocks()
            .iter()
            .map(|b| Matrix::zeros(b.value.rows(), b.value.cols()))
            .collect();
        let mut state = OptimizerState::new(&p);
        rmsprop_step(&mut p, &grads, &mut state, &hp_for_step(0.0)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn weight_decay_skips_biases() {
        let mut p = ModelParams::init(1, 3, 4, 2).unwrap();
        p.embed_bias = Matrix::filled(1, 4, 0.5);
        let grads: Vec<Matrix> = p
            .blocks()
            .iter()
            .map(|b| Matrix::zeros(b.value.rows(), b.value.cols()))
            .collect();
        let mut state = OptimizerState::new(&p);
        let w_before = p.embed_weight.clone();
        rmsprop_step(&mut p, &grads, &mut state, &hp_for_step(0.1)).unwrap();
        assert_eq!(p.embed_bias, Matrix::filled(1, 4, 0.5));
        assert_ne!(p.embed_weight, w_before);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut p = ModelParams::init(1, 3, 4, 2).unwrap();
        let mut grads: Vec<Matrix> = p
            .blocks()
            .iter()
            .map(|b| Matrix::zeros(b.value.rows(), b.value.cols()))
            .collect();
        grads[3].data_mut()[0] = f64::NAN;
        let before = p.clone();
        let mut state = OptimizerState::new(&p);
        let err = rmsprop_step(&mut p, &grads, &mut state, &Hyperparams::default()).unwrap_err();
        assert!(err.to_string().contains("attn0_wk"), "{err}");
        assert_eq!(p, before);
    }

    #[test]
    fn rmsprop_is_deterministic() {
        let p0 = ModelParams::init(3, 3, 4, 2).unwrap();
        let grads: Vec<Matrix> = p0
            .blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| Matrix::filled(b.value.rows(), b.value.cols(), 0.1 * i as f64 - 0.3))
            .collect();
        let run = || {
            let mut p = p0.clone();
            let mut s = OptimizerState::new(&p);
            rmsprop_step(&mut p, &grads, &mut s, &Hyperparams::default()).unwrap();
            (p, s)
        };
        assert_eq!(run(), run());
    }

    fn toy_pools() -> (Matrix, Matrix) {
        let u = Matrix::new(40, 2, (0..80).map(|i| ((i * 37) % 11) as f64 / 11.0).collect())
            .unwrap();
        let a = Matrix::new(4, 2, vec![5.0, 5.0, 6.0, 5.5, 5.5, 6.0, 6.5, 6.5]).unwrap();
        (u, a)
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (u, a) = toy_pools();
        let hp = Hyperparams {
            epochs: 0,
            d_h: 4,
            ..Hyperparams::default()
        };
        let out = train(&u, &a, &hp).unwrap();
        assert!(out.log.epochs.is_empty());
        assert_eq!(out.log.best_epoch, None);
        assert_eq!(out.model, ModelParams::init_with(hp.seed, hp.model_meta(2)).unwrap());
    }

    #[test]
    fn best_checkpoint_is_argmin() {
        let (u, a) = toy_pools();
        let hp = Hyperparams {
            epochs: 6,
            batches_per_epoch: 3,
            batch_size: 8,
            d_h: 4,
            k: 4,
            learning_rate: 0.05,
            ..Hyperparams::default()
        };
        let out = train(&u, &a, &hp).unwrap();
        let losses = out.log.losses();
        let argmin = losses
            .iter()
            .enumerate()
            .fold(0, |best, (i, l)| if *l < losses[best] { i } else { best });
        assert_eq!(out.log.best_epoch, Some(argmin + 1));
    }

    #[test]
    fn parallel_and_sequential_gradients_agree_bitwise() {
        let (u, a) = toy_pools();
        let model = ModelParams::init(5, 2, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch =
            crate::sampler::sample_batch(&u, &a, 4, 16, &GradeMix::default(), &mut rng).unwrap();
        let s = batch_gradient(&model, &batch, LossKind::Mae, Execution::Sequential).unwrap();
        let p = batch_gradient(&model, &batch, LossKind::Mae, Execution::Parallel).unwrap();
        assert_eq!(s.0.to_bits(), p.0.to_bits());
        assert_eq!(s.1, p.1);
    }

    #[test]
    fn batch_loss_matches_mae() {
        let (u, a) = toy_pools();
        let model = ModelParams::init(5, 2, 4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch =
            crate::sampler::sample_batch(&u, &a, 4, 10, &GradeMix::default(), &mut rng).unwrap();
        let preds: Vec<f64> = batch.iter().map(|s| model.score_set(&s.set).unwrap()).collect();
        let grades: Vec<usize> = batch.iter().map(|s| s.grade).collect();
        let (loss, _) = batch_gradient(&model, &batch, LossKind::Mae, Execution::Sequential).unwrap();
        assert!((loss - mae_loss(&preds, &grades).unwrap()).abs() < 1e-12);
    }
}
