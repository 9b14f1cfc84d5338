//! Run configuration: one JSON file, with command-line overrides.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gcad::pipeline::DetectorConfig;
use gcad::predictor::Optimizer;
use gcad::{GcadError, Result};
use serde::{Deserialize, Serialize};

/// File paths plus every detector setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub pattern_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub detector: DetectorConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

impl From<OptimizerArg> for Optimizer {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        }
    }
}

/// Options shared by `train`, `pattern` and `score`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_csv: Option<PathBuf>,
    #[arg(long)]
    pub test_csv: Option<PathBuf>,
    /// Model file (default: <out-dir>/model.json).
    #[arg(long = "model")]
    pub model_path: Option<PathBuf>,
    /// Normal pattern file (default: <out-dir>/normal_pattern.json).
    #[arg(long = "pattern")]
    pub pattern_path: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,

    /// Window length τ.
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub temporal_hidden: Option<usize>,
    #[arg(long)]
    pub feature_hidden: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, conflicts_with = "no_early_stop")]
    pub patience: Option<usize>,
    /// Run every epoch regardless of validation loss.
    #[arg(long)]
    pub no_early_stop: bool,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Sparsity threshold h.
    #[arg(long, visible_alias = "h")]
    pub threshold: Option<f64>,
    /// Take h as this quantile of the unthresholded normal pattern.
    #[arg(long)]
    pub threshold_quantile: Option<f64>,
    /// Skip the max(0, A - Aᵀ) step.
    #[arg(long)]
    pub no_antisymmetrize: bool,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Bernoulli keep probability p for the normal pattern.
    #[arg(long, visible_alias = "p")]
    pub bernoulli_p: Option<f64>,
    /// Drop the diagonal from the score.
    #[arg(long)]
    pub no_temporal: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| GcadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| GcadError::Config(format!("{}: {}", path.display(), e)))?;
    let known = serde_json::to_value(RunConfig::default())?;
    if let (Some(given), Some(known)) = (value.as_object(), known.as_object()) {
        if let Some(key) = given.keys().find(|k| !known.contains_key(*k)) {
            return Err(GcadError::Config(format!(
                "{}: unknown field '{}'",
                path.display(),
                key
            )));
        }
    }
    serde_json::from_value(value).map_err(|e| GcadError::Config(format!("{}: {}", path.display(), e)))
}

impl RunArgs {
    /// Loads the config file (if any), applies the flags and validates.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => read_config(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = Some(v);
                }
            )*};
        }
        set!(train_csv, test_csv, model_path, pattern_path, out_dir);

        let d = &mut c.detector;
        macro_rules! over {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    d.$field = v;
                }
            )*};
        }
        over!(max_lag, n_layers, learning_rate, epochs, batch_size, train_fraction, stride);
        over!(threshold, epsilon, beta, bernoulli_p, seed);
        if self.temporal_hidden.is_some() {
            d.temporal_hidden = self.temporal_hidden;
        }
        if self.feature_hidden.is_some() {
            d.feature_hidden = self.feature_hidden;
        }
        if let Some(o) = self.optimizer {
            d.optimizer = o.into();
        }
        if self.patience.is_some() {
            d.patience = self.patience;
        }
        if self.no_early_stop {
            d.patience = None;
        }
        if self.threshold_quantile.is_some() {
            d.threshold_quantile = self.threshold_quantile;
        }
        if self.no_antisymmetrize {
            d.antisymmetrize = false;
        }
        if self.no_temporal {
            d.temporal = false;
        }
        d.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model_path
            .clone()
            .unwrap_or_else(|| self.out_dir().join("model.json"))
    }

    pub fn pattern_path(&self) -> PathBuf {
        self.pattern_path
            .clone()
            .unwrap_or_else(|| self.out_dir().join("normal_pattern.json"))
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        path.as_deref().ok_or_else(|| {
            GcadError::Config(format!(
                "{} is required (--{} or \"{}\" in the config)",
                what,
                what.replace('_', "-"),
                what
            ))
        })
    }

    /// Writes the resolved configuration as `<out_dir>/<command>.config.json`.
    pub fn write_resolved(&self, command: &str) -> Result<()> {
        let path = self.out_dir().join(format!("{}.config.json", command));
        write_text(&path, &serde_json::to_string_pretty(self)?)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| GcadError::Io {
        path: dir.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| GcadError::Io {
        path: path.display().to_string(),
        source,
    })
}
