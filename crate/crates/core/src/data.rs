//! Dataset ingestion, normalization, partitioning and synthetic data.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Feature matrix with binary anomaly labels (`true` = anomaly).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<bool>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<bool>, feature_names: Option<Vec<String>>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::dimension(
                "dataset",
                features.shape(),
                (labels.len(), 1),
            ));
        }
        if let Some(n) = &feature_names {
            if n.len() != features.cols() {
                return Err(Error::dimension(
                    "dataset feature names",
                    features.shape(),
                    (1, n.len()),
                ));
            }
        }
        Ok(Self {
            features,
            labels,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_anomalies(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Which CSV column carries the label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LabelColumn {
    #[default]
    Last,
    Named(String),
}

struct RawTable {
    header: Option<Vec<String>>,
    rows: Vec<Vec<String>>,
    /// 1-based file line of the first data row.
    first_line: usize,
}

fn read_table<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: e.position().map_or(i + 1, |p| p.line() as usize),
            column: 0,
            message: e.to_string(),
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let Some(first) = records.first() else {
        return Err(Error::Parse {
            row: 1,
            column: 0,
            message: "file contains no rows".into(),
        });
    };
    let is_header = first.iter().any(|c| c.parse::<f64>().is_err());
    let (header, first_line) = if is_header {
        (Some(records.remove(0)), 2)
    } else {
        (None, 1)
    };
    let width = header
        .as_ref()
        .map_or_else(|| records.first().map_or(0, Vec::len), Vec::len);
    for (i, r) in records.iter().enumerate() {
        if r.len() != width {
            return Err(Error::Parse {
                row: first_line + i,
                column: r.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", r.len()),
            });
        }
    }
    Ok(RawTable {
        header,
        rows: records,
        first_line,
    })
}

fn parse_cell(cell: &str, row: usize, column: usize) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column,
            message: format!("'{cell}' is not a finite number"),
        }),
    }
}

/// Parses CSV text with a binary label column. A first row containing any
/// non-numeric cell is treated as the header.
pub fn parse_csv<R: Read>(reader: R, label: &LabelColumn) -> Result<Dataset> {
    let table = read_table(reader)?;
    if table.rows.is_empty() {
        return Err(Error::Parse {
            row: table.first_line,
            column: 0,
            message: "no data rows".into(),
        });
    }
    let width = table.rows[0].len();
    let label_col = match label {
        LabelColumn::Last => width - 1,
        LabelColumn::Named(name) => table
            .header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::Parse {
                row: 1,
                column: 0,
                message: format!("no column named '{name}'"),
            })?,
    };
    if width < 2 {
        return Err(Error::Parse {
            row: table.first_line,
            column: 1,
            message: "need at least one feature column and a label column".into(),
        });
    }
    let mut data = Vec::with_capacity(table.rows.len() * (width - 1));
    let mut labels = Vec::with_capacity(table.rows.len());
    for (i, r) in table.rows.iter().enumerate() {
        let line = table.first_line + i;
        for (c, cell) in r.iter().enumerate() {
            let v = parse_cell(cell, line, c + 1)?;
            if c == label_col {
                labels.push(match v {
                    0.0 => false,
                    1.0 => true,
                    _ => {
                        return Err(Error::Parse {
                            row: line,
                            column: c + 1,
                            message: format!("label '{cell}' is not 0 or 1"),
                        })
                    }
                });
            } else {
                data.push(v);
            }
        }
    }
    let names = table.header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(i, _)| *i != label_col)
            .map(|(_, n)| n)
            .collect()
    });
    Dataset::new(Matrix::new(labels.len(), width - 1, data)?, labels, names)
}

pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(f, label)
}

/// Parses a CSV where every column is a feature.
pub fn parse_features_csv<R: Read>(reader: R) -> Result<(Matrix, Option<Vec<String>>)> {
    let table = read_table(reader)?;
    let width = table.rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(table.rows.len() * width);
    for (i, r) in table.rows.iter().enumerate() {
        for (c, cell) in r.iter().enumerate() {
            data.push(parse_cell(cell, table.first_line + i, c + 1)?);
        }
    }
    let width = table.header.as_ref().map_or(width, Vec::len);
    Ok((Matrix::new(table.rows.len(), width, data)?, table.header))
}

pub fn load_features_csv(path: impl AsRef<Path>) -> Result<(Matrix, Option<Vec<String>>)> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_features_csv(f)
}

fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

fn write_rows<W: Write>(
    out: W,
    header: &[String],
    features: &Matrix,
    labels: Option<&[bool]>,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut head: Vec<String> = header.to_vec();
    if labels.is_some() {
        head.push("label".into());
    }
    w.write_record(&head)?;
    for r in 0..features.rows() {
        let mut rec: Vec<String> = features.row(r).iter().map(|v| v.to_string()).collect();
        if let Some(l) = labels {
            rec.push(if l[r] { "1" } else { "0" }.into());
        }
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Writes features plus a trailing `label` column. Values are printed in
/// shortest round-trip form, so reloading is exact.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let names = data
        .feature_names
        .clone()
        .unwrap_or_else(|| default_names(data.dim()));
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(f, &names, &data.features, Some(&data.labels)).map_err(|e| Error::io(path, e))
}

pub fn write_features_csv(path: impl AsRef<Path>, features: &Matrix, names: Option<&[String]>) -> Result<()> {
    let path = path.as_ref();
    let names = names.map_or_else(|| default_names(features.cols()), <[String]>::to_vec);
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_rows(f, &names, features, None).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StatsSource {
    /// Statistics from the training rows only.
    #[default]
    Train,
    /// Statistics from every row, test included.
    All,
}

impl std::str::FromStr for StatsSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(StatsSource::Train),
            "all" => Ok(StatsSource::All),
            other => Err(format!("unknown stats source '{other}'")),
        }
    }
}

impl std::fmt::Display for StatsSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StatsSource::Train => "train",
            StatsSource::All => "all",
        })
    }
}

/// Per-feature z-score statistics. Features with zero spread are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_dim: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl Normalization {
    pub fn fit(rows: &Matrix) -> Result<Self> {
        let n = rows.rows();
        if n == 0 {
            return Err(Error::Config("cannot fit normalization on zero rows".into()));
        }
        let d = rows.cols();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(rows.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(rows.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
        let (kept, dropped): (Vec<usize>, Vec<usize>) = (0..d).partition(|&c| std[c] > 0.0);
        if kept.is_empty() {
            return Err(Error::Config("every feature has zero variance".into()));
        }
        Ok(Self {
            input_dim: d,
            mean,
            std,
            kept,
            dropped,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.kept.len()
    }

    /// Standardizes the kept features of `m`.
    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols() != self.input_dim {
            return Err(Error::dimension(
                "normalize",
                m.shape(),
                (m.rows(), self.input_dim),
            ));
        }
        let mut data = Vec::with_capacity(m.rows() * self.kept.len());
        for r in 0..m.rows() {
            let row = m.row(r);
            for &c in &self.kept {
                data.push((row[c] - self.mean[c]) / self.std[c]);
            }
        }
        Matrix::new(m.rows(), self.kept.len(), data)
    }

    pub fn kept_names(&self, names: Option<&[String]>) -> Option<Vec<String>> {
        names.map(|n| self.kept.iter().map(|&c| n[c].clone()).collect())
    }

    fn apply_dataset(&self, d: &Dataset) -> Result<Dataset> {
        Dataset::new(
            self.apply(&d.features)?,
            d.labels.clone(),
            self.kept_names(d.feature_names.as_deref()),
        )
    }
}

/// Z-scores both partitions with statistics from `train` (or from both
/// partitions under [`StatsSource::All`]).
pub fn preprocess(train: &Dataset, test: &Dataset, source: StatsSource) -> Result<(Dataset, Dataset, Normalization)> {
    if !test.is_empty() && train.dim() != test.dim() {
        return Err(Error::dimension(
            "preprocess",
            train.features.shape(),
            test.features.shape(),
        ));
    }
    let stats = match source {
        StatsSource::Train => Normalization::fit(&train.features)?,
        StatsSource::All => Normalization::fit(&Matrix::vstack(&train.features, &test.features)?)?,
    };
    let test_out = if test.is_empty() {
        Dataset::new(
            Matrix::zeros(0, stats.output_dim()),
            Vec::new(),
            stats.kept_names(test.feature_names.as_deref()),
        )?
    } else {
        stats.apply_dataset(test)?
    };
    Ok((stats.apply_dataset(train)?, test_out, stats))
}

/// Size of the labeled-anomaly set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabeledBudget {
    /// Absolute number of labeled anomalies.
    Count(usize),
    /// Fraction of the training split's anomalies (rounded down, at least 1).
    Ratio(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub labeled: LabeledBudget,
    /// Upper bound on the anomaly fraction of the unlabeled pool.
    pub contamination_cap: f64,
    /// Treat the cap as a target and fail when too few anomalies remain.
    pub strict_contamination: bool,
    pub stats_source: StatsSource,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            labeled: LabeledBudget::Ratio(0.05),
            contamination_cap: 0.02,
            strict_contamination: false,
            stats_source: StatsSource::Train,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.contamination_cap) {
            return Err(Error::Config(format!(
                "contamination_cap must lie in [0, 1], got {}",
                self.contamination_cap
            )));
        }
        if let LabeledBudget::Ratio(r) = self.labeled {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("labeled ratio must lie in (0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

/// Row indices (into the source dataset) of each partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRows {
    pub unlabeled: Vec<usize>,
    pub anomalies: Vec<usize>,
    pub test: Vec<usize>,
    pub discarded: Vec<usize>,
}

/// Largest anomaly count `a` with `a / (normals + a) <= cap`.
fn contamination_budget(normals: usize, cap: f64) -> usize {
    if cap >= 1.0 {
        return usize::MAX;
    }
    let mut a = (cap * normals as f64 / (1.0 - cap)).floor() as usize;
    while a > 0 && a as f64 / (normals + a) as f64 > cap {
        a -= 1;
    }
    a
}

/// Partitions rows into unlabeled pool, labeled anomalies and test set.
pub fn split_rows(data: &Dataset, spec: &SplitSpec) -> Result<SplitRows> {
    spec.validate()?;
    let n = data.len();
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Config(format!(
            "test fraction {} of {n} rows leaves an empty partition",
            spec.test_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let (test, train) = perm.split_at(n_test);

    let (train_anom, train_norm): (Vec<usize>, Vec<usize>) =
        train.iter().partition(|&&r| data.labels[r]);
    let m = match spec.labeled {
        LabeledBudget::Count(m) => m,
        LabeledBudget::Ratio(r) => ((r * train_anom.len() as f64).floor() as usize).max(1),
    };
    if m > train_anom.len() {
        return Err(Error::Config(format!(
            "{m} labeled anomalies requested but the training split has {}",
            train_anom.len()
        )));
    }
    let (labeled, rest) = train_anom.split_at(m);
    let budget = contamination_budget(train_norm.len(), spec.contamination_cap);
    if spec.strict_contamination && spec.contamination_cap < 1.0 && rest.len() < budget {
        return Err(Error::Config(format!(
            "contamination {} needs {budget} unlabeled anomalies, only {} available",
            spec.contamination_cap,
            rest.len()
        )));
    }
    let keep = budget.min(rest.len());
    let mut unlabeled: Vec<usize> = train_norm.iter().chain(&rest[..keep]).copied().collect();
    let mut anomalies = labeled.to_vec();
    let mut test = test.to_vec();
    let mut discarded = rest[keep..].to_vec();
    for v in [&mut unlabeled, &mut anomalies, &mut test, &mut discarded] {
        v.sort_unstable();
    }
    Ok(SplitRows {
        unlabeled,
        anomalies,
        test,
        discarded,
    })
}

/// Partitions ready for training and scoring, all normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub unlabeled: Matrix,
    pub anomalies: Matrix,
    pub test: Dataset,
    pub normalization: Normalization,
    pub rows: SplitRows,
    pub feature_names: Option<Vec<String>>,
}

impl PreparedData {
    pub fn contamination(&self, source: &Dataset) -> f64 {
        let a = self.rows.unlabeled.iter().filter(|&&r| source.labels[r]).count();
        a as f64 / self.rows.unlabeled.len().max(1) as f64
    }
}

/// Splits, then normalizes with statistics of the retained training rows.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<PreparedData> {
    let rows = split_rows(data, spec)?;
    let train_rows: Vec<usize> = rows.unlabeled.iter().chain(&rows.anomalies).copied().collect();
    let train = data.select(&train_rows);
    let test = data.select(&rows.test);
    let (train_n, test_n, normalization) = preprocess(&train, &test, spec.stats_source)?;
    let n_u = rows.unlabeled.len();
    let unlabeled = train_n.features.select_rows(&(0..n_u).collect::<Vec<_>>());
    let anomalies = train_n
        .features
        .select_rows(&(n_u..train_rows.len()).collect::<Vec<_>>());
    Ok(PreparedData {
        unlabeled,
        anomalies,
        test: test_n,
        feature_names: train_n.feature_names,
        normalization,
        rows,
    })
}

#[derive(Serialize, Deserialize)]
struct PreparedMeta {
    normalization: Normalization,
    rows: SplitRows,
}

impl PreparedData {
    /// Writes `unlabeled.csv`, `anomalies.csv`, `test.csv` and `stats.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let names = self.feature_names.as_deref();
        write_features_csv(dir.join("unlabeled.csv"), &self.unlabeled, names)?;
        write_features_csv(dir.join("anomalies.csv"), &self.anomalies, names)?;
        write_csv(dir.join("test.csv"), &self.test)?;
        let meta = PreparedMeta {
            normalization: self.normalization.clone(),
            rows: self.rows.clone(),
        };
        let path = dir.join("stats.json");
        let text = serde_json::to_string_pretty(&meta).expect("stats serialize");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (unlabeled, names) = load_features_csv(dir.join("unlabeled.csv"))?;
        let (anomalies, _) = load_features_csv(dir.join("anomalies.csv"))?;
        let test = load_csv(dir.join("test.csv"), &LabelColumn::Last)?;
        let path = dir.join("stats.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: PreparedMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            row: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ok(Self {
            unlabeled,
            anomalies,
            test,
            normalization: meta.normalization,
            rows: meta.rows,
            feature_names: names,
        })
    }
}

/// Normal points from a unit spherical Gaussian at the origin; anomalies
/// uniform in direction with radius uniform on
/// `[separation * sqrt(d), (separation + 1) * sqrt(d)]`. Normals come first.
pub fn synth_blobs(n_normal: usize, n_anomaly: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if d == 0 {
        return Err(Error::Config("synthetic data needs d >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity((n_normal + n_anomaly) * d);
    for _ in 0..n_normal * d {
        data.push(rng.sample::<f64, _>(StandardNormal));
    }
    let root_d = (d as f64).sqrt();
    for _ in 0..n_anomaly {
        let dir: Vec<f64> = loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        };
        let radius = rng.random_range(separation * root_d..=(separation + 1.0) * root_d);
        data.extend(dir.into_iter().map(|x| x * radius));
    }
    let mut labels = vec![false; n_normal];
    labels.resize(n_normal + n_anomaly, true);
    Dataset::new(
        Matrix::new(n_normal + n_anomaly, d, data)?,
        labels,
        Some(default_names(d)),
    )
}
