//! End-to-end experiments and one-axis sweeps.

use std::io::Write;
use std::time::Instant;

use crate::config::RunConfig;
use crate::data::{split, Dataset, LabeledBudget, PreparedData};
use crate::error::{Error, Result};
use crate::metrics::EvalResult;
use crate::scorer::{score_dataset, ScoreReport};
use crate::trainer::{train, TrainOutcome};

#[derive(Debug, Clone)]
pub struct Experiment {
    pub prepared: PreparedData,
    pub outcome: TrainOutcome,
    pub report: ScoreReport,
}

impl Experiment {
    pub fn eval(&self) -> Result<EvalResult> {
        self.report
            .eval
            .ok_or_else(|| Error::Eval("test split does not contain both classes".into()))
    }
}

/// Trains on a prepared split and scores its test partition.
pub fn run_prepared(prepared: PreparedData, cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    let outcome = train(&prepared.unlabeled, &prepared.anomalies, &cfg.hp)?;
    let mut report = score_dataset(
        &outcome.model,
        &prepared.test.features,
        Some(&prepared.test.labels),
        &prepared.unlabeled,
        &cfg.scoring(),
    )?;
    report.meta.train_seed = Some(cfg.hp.seed);
    Ok(Experiment {
        prepared,
        outcome,
        report,
    })
}

/// Splits, trains and scores.
pub fn run_experiment(data: &Dataset, cfg: &RunConfig) -> Result<Experiment> {
    cfg.validate()?;
    run_prepared(split(data, &cfg.split)?, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SetSize,
    Contamination,
    LabeledRatio,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "set_size" => Ok(SweepAxis::SetSize),
            "contamination" => Ok(SweepAxis::Contamination),
            "labeled_ratio" => Ok(SweepAxis::LabeledRatio),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}' (expected set_size, contamination or labeled_ratio)"
            ))),
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::SetSize => "set_size",
            SweepAxis::Contamination => "contamination",
            SweepAxis::LabeledRatio => "labeled_ratio",
        })
    }
}

impl SweepAxis {
    /// Returns `base` with the axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::SetSize => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("set size {value} is not a positive integer")));
                }
                cfg.hp.k = value as usize;
            }
            SweepAxis::Contamination => {
                cfg.split.contamination_cap = value;
                cfg.split.strict_contamination = true;
            }
            SweepAxis::LabeledRatio => cfg.split.labeled = LabeledBudget::Ratio(value),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub result: std::result::Result<EvalResult, crate::error::Category>,
    pub wall_ms: u64,
}

impl SweepRow {
    pub fn status(&self) -> String {
        match &self.result {
            Ok(_) => "ok".into(),
            Err(c) => format!("failed:{}", c.as_str()),
        }
    }
}

/// Runs one experiment per value, sorted ascending by value. Run `i`
/// uses seed `base seed + i`. Failed runs are reported in their row.
pub fn sweep(data: &Dataset, base: &RunConfig, axis: SweepAxis, values: &[f64]) -> Vec<SweepRow> {
    let mut values = values.to_vec();
    values.sort_by(f64::total_cmp);
    base.hp.execution.map(values.len(), |i| {
        let start = Instant::now();
        let result = axis
            .apply(base, values[i])
            .and_then(|mut cfg| {
                cfg.set_seed(base.hp.seed.wrapping_add(i as u64));
                run_experiment(data, &cfg)
            })
            .and_then(|e| e.eval());
        if let Err(e) = &result {
            log::warn!("{axis}={}: {e}", values[i]);
        }
        SweepRow {
            axis,
            value: values[i],
            result: result.map_err(|e| e.category()),
            wall_ms: start.elapsed().as_millis() as u64,
        }
    })
}

pub const SWEEP_HEADER: &str = "axis,value,auc_roc,auc_pr,wall_ms,status";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        let (roc, pr) = match &r.result {
            Ok(e) => (e.auc_roc.to_string(), e.auc_pr.to_string()),
            Err(_) => (String::new(), String::new()),
        };
        writeln!(out, "{},{},{roc},{pr},{},{}", r.axis, r.value, r.wall_ms, r.status())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::Category;

    fn quick() -> RunConfig {
        let mut c = RunConfig::default();
        c.apply_overrides(&[
            "epochs=2",
            "batches_per_epoch=2",
            "batch_size=8",
            "n_contexts=4",
            "n_references=4",
            "labeled_count=3",
        ])
        .unwrap();
        c
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("set_size".parse::<SweepAxis>().unwrap(), SweepAxis::SetSize);
        let err = "depth".parse::<SweepAxis>().unwrap_err();
        assert_eq!(err.category(), Category::Config);
    }

    #[test]
    fn experiment_produces_metrics() {
        let data = synth_blobs(200, 20, 3, 4.0, 0).unwrap();
        let e = run_experiment(&data, &quick()).unwrap();
        assert_eq!(e.report.records.len(), 44);
        assert_eq!(e.outcome.log.epochs.len(), 2);
        assert!(e.eval().is_ok());
        assert_eq!(e.report.meta.train_seed, Some(0));
    }

    #[test]
    fn sweep_rows_sorted_and_partial_failure() {
        let data = synth_blobs(200, 20, 3, 4.0, 0).unwrap();
        let rows = sweep(&data, &quick(), SweepAxis::Contamination, &[0.5, 0.0, 0.02]);
        let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
        assert_eq!(values, vec![0.0, 0.02, 0.5]);
        assert_eq!(rows[2].status(), "failed:config");
        assert_eq!(rows[0].status(), "ok");
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with(SWEEP_HEADER));
    }
}
