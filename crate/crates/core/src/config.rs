//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. [`RunConfig::to_text`]
//! writes every key, and parsing that text reproduces the configuration
//! exactly.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::{LabelColumn, LabeledBudget, SplitSpec};
use crate::error::{Error, Result};
use crate::scorer::{ReferenceMode, ScoringConfig};
use crate::trainer::Hyperparams;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub hp: Hyperparams,
    pub split: SplitSpec,
    pub label_column: LabelColumn,
    /// Score against every pool point instead of sampled references.
    pub exhaustive_references: bool,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse '{value}': {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "k",
        "d_h",
        "heads",
        "depth",
        "pooling",
        "epochs",
        "batches_per_epoch",
        "batch_size",
        "learning_rate",
        "weight_decay",
        "rmsprop_smoothing",
        "rmsprop_epsilon",
        "max_grade",
        "grade_weights",
        "loss",
        "n_contexts",
        "n_references",
        "exhaustive_references",
        "seed",
        "score_seed",
        "execution",
        "test_fraction",
        "labeled_count",
        "labeled_ratio",
        "contamination_cap",
        "strict_contamination",
        "stats_source",
        "split_seed",
        "label_column",
    ];

    /// Applies one setting. `labeled_count` and `labeled_ratio` replace each
    /// other.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let hp = &mut self.hp;
        let sp = &mut self.split;
        match key.trim() {
            "k" => hp.k = parse(key, v)?,
            "d_h" => hp.d_h = parse(key, v)?,
            "heads" => hp.heads = parse(key, v)?,
            "depth" => hp.depth = parse(key, v)?,
            "pooling" => hp.pooling = parse(key, v)?,
            "epochs" => hp.epochs = parse(key, v)?,
            "batches_per_epoch" => hp.batches_per_epoch = parse(key, v)?,
            "batch_size" => hp.batch_size = parse(key, v)?,
            "learning_rate" => hp.learning_rate = parse(key, v)?,
            "weight_decay" => hp.weight_decay = parse(key, v)?,
            "rmsprop_smoothing" => hp.rmsprop_smoothing = parse(key, v)?,
            "rmsprop_epsilon" => hp.rmsprop_epsilon = parse(key, v)?,
            "max_grade" => hp.max_grade = parse(key, v)?,
            "grade_weights" => {
                hp.grade_weights = if v.is_empty() || v == "uniform" {
                    None
                } else {
                    Some(
                        v.split(',')
                            .map(|w| parse(key, w.trim()))
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "loss" => hp.loss = parse(key, v)?,
            "n_contexts" => hp.n_contexts = parse(key, v)?,
            "n_references" => hp.n_references = parse(key, v)?,
            "exhaustive_references" => self.exhaustive_references = parse_bool(key, v)?,
            "seed" => hp.seed = parse(key, v)?,
            "score_seed" => hp.score_seed = parse(key, v)?,
            "execution" => hp.execution = parse(key, v)?,
            "test_fraction" => sp.test_fraction = parse(key, v)?,
            "labeled_count" => sp.labeled = LabeledBudget::Count(parse(key, v)?),
            "labeled_ratio" => sp.labeled = LabeledBudget::Ratio(parse(key, v)?),
            "contamination_cap" => sp.contamination_cap = parse(key, v)?,
            "strict_contamination" => sp.strict_contamination = parse_bool(key, v)?,
            "stats_source" => sp.stats_source = parse(key, v)?,
            "split_seed" => sp.seed = parse(key, v)?,
            "label_column" => {
                self.label_column = match v {
                    "" | "last" => LabelColumn::Last,
                    name => LabelColumn::Named(name.to_string()),
                }
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Sets both the training and the split seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.hp.seed = seed;
        self.split.seed = seed;
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", i + 1))
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", i + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let hp = &self.hp;
        let sp = &self.split;
        let mut s = String::from("# setad run configuration\n");
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("k", hp.k.to_string());
        put("d_h", hp.d_h.to_string());
        put("heads", hp.heads.to_string());
        put("depth", hp.depth.to_string());
        put("pooling", hp.pooling.to_string());
        put("epochs", hp.epochs.to_string());
        put("batches_per_epoch", hp.batches_per_epoch.to_string());
        put("batch_size", hp.batch_size.to_string());
        put("learning_rate", hp.learning_rate.to_string());
        put("weight_decay", hp.weight_decay.to_string());
        put("rmsprop_smoothing", hp.rmsprop_smoothing.to_string());
        put("rmsprop_epsilon", hp.rmsprop_epsilon.to_string());
        put("max_grade", hp.max_grade.to_string());
        put(
            "grade_weights",
            hp.grade_weights
                .as_deref()
                .map_or_else(|| "uniform".to_string(), join),
        );
        put("loss", hp.loss.to_string());
        put("n_contexts", hp.n_contexts.to_string());
        put("n_references", hp.n_references.to_string());
        put("exhaustive_references", self.exhaustive_references.to_string());
        put("seed", hp.seed.to_string());
        put("score_seed", hp.score_seed.to_string());
        put("execution", hp.execution.to_string());
        put("test_fraction", sp.test_fraction.to_string());
        match sp.labeled {
            LabeledBudget::Count(m) => put("labeled_count", m.to_string()),
            LabeledBudget::Ratio(r) => put("labeled_ratio", r.to_string()),
        }
        put("contamination_cap", sp.contamination_cap.to_string());
        put("strict_contamination", sp.strict_contamination.to_string());
        put("stats_source", sp.stats_source.to_string());
        put("split_seed", sp.seed.to_string());
        put(
            "label_column",
            match &self.label_column {
                LabelColumn::Last => "last".to_string(),
                LabelColumn::Named(n) => n.clone(),
            },
        );
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        self.split.validate()
    }

    pub fn scoring(&self) -> ScoringConfig {
        let mut cfg = ScoringConfig::from_hyperparams(&self.hp);
        if self.exhaustive_references {
            cfg.references = ReferenceMode::Exhaustive;
        }
        cfg
    }
}
