use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gcad::causality::write_matrix;
use gcad::data::{load_csv, load_csv_auto, split_train_val, Anomaly, LABEL_COLUMN};
use gcad::eval::evaluate_series;
use gcad::pipeline::{build_pattern, fit, test_windows};
use gcad::scoring::{deviation_matrix, score_windows};
use gcad::{GcadError, MixerModel, NormalPattern, Result, ScoreSeries, SynthSpec};
use log::info;
use serde::Serialize;

use crate::config::{ensure_dir, write_text, RunArgs};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator spec as JSON (default: the built-in benchmark).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum MatrixFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Also export the deviation matrix |Ã − Ā| of the window predicting step t.
    #[arg(long = "dump-matrix", value_name = "T")]
    pub dump_matrix: Vec<usize>,
    #[arg(long, value_enum, default_value_t = MatrixFormat::Csv)]
    pub matrix_format: MatrixFormat,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Score file written by `gcad score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV with a `label` column, indexed like the scored series.
    #[arg(long, visible_alias = "test-csv")]
    pub labels: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Truth<'a> {
    n_channels: usize,
    adjacency: &'a [Vec<bool>],
    anomalies: &'a [Anomaly],
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| GcadError::Io {
                path: path.display().to_string(),
                source,
            })?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| GcadError::Config(format!("{}: {}", path.display(), e)))?
        }
        None => SynthSpec::default_benchmark(),
    };
    let out = spec.generate()?;
    ensure_dir(&args.out_dir)?;
    out.train.write_csv(args.out_dir.join("train.csv"))?;
    out.test.write_csv(args.out_dir.join("test.csv"))?;
    let truth = Truth {
        n_channels: spec.n_channels,
        adjacency: &out.adjacency,
        anomalies: &spec.anomalies,
    };
    write_text(&args.out_dir.join("truth.json"), &serde_json::to_string_pretty(&truth)?)?;
    write_text(
        &args.out_dir.join("synth.config.json"),
        &serde_json::to_string_pretty(&spec)?,
    )?;
    info!(
        "wrote {} training and {} test rows to {}",
        out.train.len(),
        out.test.len(),
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    epochs_run: usize,
    best_epoch: usize,
    train_mse: f64,
    val_mse: Option<f64>,
}

pub fn train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let data = load_csv_auto(cfg.require(&cfg.train_csv, "train_csv")?)?;
    let out_dir = cfg.out_dir();
    ensure_dir(&out_dir)?;
    let fitted = fit(&data, &cfg.detector)?;
    let model_path = cfg.model_path();
    fitted.model.save(&model_path)?;

    let mut log = String::from("epoch,train_mse,val_mse\n");
    for e in &fitted.log {
        let val = e.val_mse.map(|v| v.to_string()).unwrap_or_default();
        log.push_str(&format!("{},{},{}\n", e.epoch, e.train_mse, val));
    }
    write_text(&out_dir.join("train_log.csv"), &log)?;
    cfg.write_resolved("train")?;

    let best = fitted.log.iter().find(|e| e.epoch == fitted.best_epoch);
    let summary = TrainSummary {
        epochs_run: fitted.log.len(),
        best_epoch: fitted.best_epoch,
        train_mse: best.map_or(f64::NAN, |e| e.train_mse),
        val_mse: best.and_then(|e| e.val_mse),
    };
    println!("{}", serde_json::to_string(&summary)?);
    info!("model written to {}", model_path.display());
    Ok(())
}

pub fn pattern(args: &RunArgs, workers: Option<usize>) -> Result<()> {
    let mut cfg = args.resolve()?;
    let model = MixerModel::load(cfg.model_path())?;
    cfg.detector.max_lag = model.max_lag();
    let data = load_csv_auto(cfg.require(&cfg.train_csv, "train_csv")?)?;
    let (train_part, _) = split_train_val(&data, cfg.detector.train_fraction)?;
    let windows = test_windows(&model, &train_part, cfg.detector.stride)?;
    ensure_dir(&cfg.out_dir())?;
    let pattern = build_pattern(&model, &windows, &cfg.detector, workers)?;
    let path = cfg.pattern_path();
    pattern.save(&path)?;
    cfg.write_resolved("pattern")?;
    info!(
        "normal pattern from {} of {} windows written to {}",
        pattern.n_samples,
        windows.len(),
        path.display()
    );
    Ok(())
}

fn matrix_path(out_dir: &Path, t: usize, format: MatrixFormat) -> PathBuf {
    let ext = match format {
        MatrixFormat::Csv => "csv",
        MatrixFormat::Json => "json",
    };
    out_dir.join(format!("deviation_t{}.{}", t, ext))
}

pub fn score(args: &ScoreArgs, workers: Option<usize>) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    let model = MixerModel::load(cfg.model_path())?;
    let pattern = NormalPattern::load(cfg.pattern_path())?;
    cfg.detector.max_lag = model.max_lag();
    let test = load_csv_auto(cfg.require(&cfg.test_csv, "test_csv")?)?;
    let windows = test_windows(&model, &test, cfg.detector.stride)?;
    let (series, graphs) = score_windows(
        &model,
        &pattern,
        &windows.windows,
        &cfg.detector.score_options(workers),
    )?;
    let out_dir = cfg.out_dir();
    ensure_dir(&out_dir)?;
    series.write_csv(out_dir.join("scores.csv"))?;
    for &t in &args.dump_matrix {
        let k = series.timestamps.iter().position(|&s| s == t).ok_or_else(|| {
            GcadError::Contract(format!("no window predicts step {}", t))
        })?;
        let d = deviation_matrix(&graphs[k], &pattern)?;
        write_matrix(&d, matrix_path(&out_dir, t, args.matrix_format))?;
    }
    cfg.write_resolved("score")?;
    info!("scored {} windows", series.len());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let series = ScoreSeries::read_csv(&args.scores)?;
    let labelled = load_csv(&args.labels, Some(LABEL_COLUMN))?;
    let labels = labelled.labels().expect("label column requested");
    let report = evaluate_series(&series, labels)?;
    println!("{}", serde_json::to_string(&report)?);
    if let Some(path) = &args.out {
        write_text(path, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}
