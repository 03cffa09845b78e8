use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use setad::config::RunConfig;
use setad::data::{self, PreparedData};
use setad::encoder::ModelParams;
use setad::metrics;
use setad::pipeline::{self, SweepAxis};
use setad::scorer::{score_dataset, ScoreReport};
use setad::trainer::train;
use setad::{Error, Result};

#[derive(Parser)]
#[command(name = "setad", version, about = "Set-level graded anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable), e.g. --set k=4.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for the split and training; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split a labeled CSV, train a model and record the run.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score test data with a trained run.
    Score {
        /// Output directory of a previous `train`.
        #[arg(long)]
        run: PathBuf,
        /// Raw CSV to score instead of the run's held-out test split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// The CSV has no label column.
        #[arg(long)]
        no_labels: bool,
        /// Report path (default: RUN/report.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Recompute AUC-ROC and AUC-PR from a score report.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
    },
    /// Write a synthetic two-cluster dataset as CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        normal: usize,
        #[arg(long, default_value_t = 40)]
        anomaly: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and score once per value of one axis; writes a curve CSV.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        /// set_size, contamination or labeled_ratio.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn cmd_train(data_path: &Path, out: &Path, args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let dataset = data::load_csv(data_path, &cfg.label_column)?;
    let prepared = data::split(&dataset, &cfg.split)?;
    let outcome = train(&prepared.unlabeled, &prepared.anomalies, &cfg.hp)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    outcome.model.save(out.join("model.bin"))?;
    let mut log = Vec::new();
    outcome
        .log
        .write_jsonl(&cfg.hp, &mut log)
        .map_err(|e| Error::io(out.join("train_log.jsonl"), e))?;
    write(&out.join("train_log.jsonl"), log)?;
    cfg.save(out.join("config.txt"))?;
    prepared.save(out.join("prepared"))?;
    println!(
        "trained on {} unlabeled + {} labeled anomalies; best epoch {:?}; model {}",
        prepared.unlabeled.rows(),
        prepared.anomalies.rows(),
        outcome.log.best_epoch,
        outcome.model.fingerprint()
    );
    Ok(())
}

fn cmd_score(
    run: &Path,
    data_path: Option<&Path>,
    no_labels: bool,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<()> {
    let mut cfg = RunConfig::load(run.join("config.txt"))?;
    cfg.apply_overrides(overrides)?;
    cfg.validate()?;
    let model = ModelParams::load(run.join("model.bin"))?;
    let prepared = PreparedData::load(run.join("prepared"))?;
    let (test, labels) = match data_path {
        None => (prepared.test.features.clone(), Some(prepared.test.labels.clone())),
        Some(p) if no_labels => {
            let (raw, _) = data::load_features_csv(p)?;
            (prepared.normalization.apply(&raw)?, None)
        }
        Some(p) => {
            let ds = data::load_csv(p, &cfg.label_column)?;
            (prepared.normalization.apply(&ds.features)?, Some(ds.labels))
        }
    };
    let mut report = score_dataset(
        &model,
        &test,
        labels.as_deref(),
        &prepared.unlabeled,
        &cfg.scoring(),
    )?;
    report.meta.train_seed = Some(cfg.hp.seed);
    let out = out.map_or_else(|| run.join("report.json"), Path::to_path_buf);
    write(&out, report.to_json())?;
    match report.eval {
        Some(e) => println!(
            "scored {} points; auc_roc={} auc_pr={}",
            report.records.len(),
            e.auc_roc,
            e.auc_pr
        ),
        None => println!("scored {} points", report.records.len()),
    }
    Ok(())
}

fn cmd_evaluate(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report = ScoreReport::from_json(&text)?;
    let labels: Vec<bool> = report
        .records
        .iter()
        .map(|r| {
            r.label
                .map(|l| l == 1)
                .ok_or_else(|| Error::Eval(format!("record {} has no label", r.row)))
        })
        .collect::<Result<_>>()?;
    let eval = metrics::evaluate(&report.scores(), &labels)?;
    println!("{}", serde_json::to_string(&eval).expect("eval serializes"));
    Ok(())
}

fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("sweep value '{v}': {e}")))
        })
        .collect()
}

fn cmd_sweep(data_path: &Path, axis: &str, values: &str, out: &Path, args: &ConfigArgs) -> Result<()> {
    let axis: SweepAxis = axis.parse()?;
    let values = parse_values(values)?;
    let cfg = args.resolve()?;
    let dataset = data::load_csv(data_path, &cfg.label_column)?;
    let rows = pipeline::sweep(&dataset, &cfg, axis, &values);
    let mut buf = Vec::new();
    pipeline::write_sweep_csv(&rows, &mut buf).map_err(|e| Error::io(out, e))?;
    write(out, buf)?;
    if let Some(dir) = out.parent() {
        let stem = out.file_stem().map_or("sweep".into(), |s| s.to_string_lossy());
        cfg.save(dir.join(format!("{stem}.config.txt")))?;
    }
    let failed: Vec<_> = rows.iter().filter(|r| r.result.is_err()).collect();
    match failed.first() {
        None => Ok(()),
        Some(first) => {
            let category = first.result.as_ref().unwrap_err();
            Err(Error::Partial {
                category: *category,
                message: format!("{} of {} sweep runs failed", failed.len(), rows.len()),
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { data, out, cfg } => cmd_train(&data, &out, &cfg),
        Command::Score {
            run,
            data,
            no_labels,
            out,
            overrides,
        } => cmd_score(&run, data.as_deref(), no_labels, out.as_deref(), &overrides),
        Command::Evaluate { report } => cmd_evaluate(&report),
        Command::Synth {
            out,
            normal,
            anomaly,
            dim,
            separation,
            seed,
        } => data::write_csv(&out, &data::synth_blobs(normal, anomaly, dim, separation, seed)?),
        Command::Sweep {
            data,
            axis,
            values,
            out,
            cfg,
        } => cmd_sweep(&data, &axis, &values, &out, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error:config: {first}");
            return ExitCode::from(setad::Category::Config.exit_code());
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let c = e.category();
            eprintln!("error:{}: {e}", c.as_str());
            ExitCode::from(c.exit_code())
        }
    }
}
