//! End-to-end helpers: normalize, window, train, sample the normal
//! pattern and score a test set.

use serde::{Deserialize, Serialize};

use crate::causality::{GraphOptions, Perturbation};
use crate::data::{make_windows, split_train_val, Dataset, MinMaxStats, WindowSet};
use crate::error::{GcadError, Result};
use crate::predictor::{train, EpochLog, MixerConfig, MixerModel, Optimizer};
use crate::scoring::{
    sample_normal_pattern, score_windows, NormalPattern, PatternOptions, ScoreOptions, ScoreSeries,
    DEFAULT_BERNOULLI_P, DEFAULT_EPSILON,
};

/// Every numeric knob of a detection run. Channel count comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub max_lag: usize,
    pub n_layers: usize,
    /// Defaults to `2τ` when absent.
    pub temporal_hidden: Option<usize>,
    /// Defaults to `2N` when absent.
    pub feature_hidden: Option<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub patience: Option<usize>,
    pub train_fraction: f64,
    pub stride: usize,
    /// Sparsity threshold `h`.
    pub threshold: f64,
    /// When set, `h` is instead taken as this quantile of the entries of
    /// the unthresholded normal pattern.
    pub threshold_quantile: Option<f64>,
    pub antisymmetrize: bool,
    /// Monte-Carlo gradient averaging; off by default.
    pub perturbation: Option<Perturbation>,
    pub epsilon: f64,
    pub beta: f64,
    pub bernoulli_p: f64,
    pub temporal: bool,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let mixer = MixerConfig::new(1, 4);
        DetectorConfig {
            max_lag: mixer.max_lag,
            n_layers: mixer.n_layers,
            temporal_hidden: None,
            feature_hidden: None,
            learning_rate: mixer.learning_rate,
            epochs: mixer.epochs,
            batch_size: mixer.batch_size,
            optimizer: mixer.optimizer,
            patience: mixer.patience,
            train_fraction: 0.8,
            stride: 1,
            threshold: 0.0,
            threshold_quantile: None,
            antisymmetrize: true,
            perturbation: None,
            epsilon: DEFAULT_EPSILON,
            beta: 0.0,
            bernoulli_p: DEFAULT_BERNOULLI_P,
            temporal: true,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    /// Settings used for the bundled synthetic benchmark: Adam with early
    /// stopping, `h` at the 90th percentile of the normal pattern, `β = 5`.
    pub fn synthetic_benchmark() -> Self {
        DetectorConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 3e-3,
            patience: Some(10),
            threshold_quantile: Some(0.9),
            beta: 5.0,
            ..DetectorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mixer(1).validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(GcadError::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.stride == 0 {
            return Err(GcadError::Config("stride must be >= 1".into()));
        }
        let nonneg = [
            ("threshold", self.threshold),
            ("epsilon", self.epsilon),
            ("beta", self.beta),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(GcadError::Config(format!("{} must be >= 0, got {}", name, v)));
        }
        if let Some(q) = self.threshold_quantile {
            if !(0.0..=1.0).contains(&q) {
                return Err(GcadError::Config(format!(
                    "threshold_quantile must be in [0, 1], got {}",
                    q
                )));
            }
        }
        if let Some(p) = &self.perturbation {
            p.validate()?;
        }
        if !(self.bernoulli_p > 0.0 && self.bernoulli_p <= 1.0) {
            return Err(GcadError::Config(format!(
                "bernoulli_p must be in (0, 1], got {}",
                self.bernoulli_p
            )));
        }
        Ok(())
    }

    pub fn mixer(&self, n_channels: usize) -> MixerConfig {
        MixerConfig {
            n_channels,
            max_lag: self.max_lag,
            n_layers: self.n_layers,
            temporal_hidden: self.temporal_hidden.unwrap_or(2 * self.max_lag),
            feature_hidden: self.feature_hidden.unwrap_or(2 * n_channels),
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: self.optimizer,
            patience: self.patience,
        }
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            threshold: self.threshold,
            antisymmetrize: self.antisymmetrize,
            perturbation: self.perturbation,
            workers: None,
        }
    }

    pub fn pattern_options(&self) -> PatternOptions {
        PatternOptions {
            bernoulli_p: self.bernoulli_p,
            seed: self.seed,
            epsilon: self.epsilon,
            graph: self.graph_options(),
        }
    }

    pub fn score_options(&self, workers: Option<usize>) -> ScoreOptions {
        ScoreOptions {
            beta: self.beta,
            temporal: self.temporal,
            workers,
        }
    }
}

/// Normalized training and validation windows of the normal data.
#[derive(Debug, Clone)]
pub struct NormalData {
    pub train: WindowSet,
    pub validation: WindowSet,
    pub stats: MinMaxStats,
}

/// Splits normal data, fits min–max on the training prefix and windows both parts.
pub fn prepare_normal(normal: &Dataset, config: &DetectorConfig) -> Result<NormalData> {
    let (train_part, val_part) = split_train_val(normal, config.train_fraction)?;
    let stats = MinMaxStats::fit(&train_part)?;
    let train = make_windows(&stats.apply(&train_part)?, config.max_lag, config.stride)?;
    let validation = if val_part.len() > config.max_lag {
        make_windows(&stats.apply(&val_part)?, config.max_lag, config.stride)?
    } else {
        WindowSet {
            windows: vec![],
            stride: config.stride,
            max_lag: config.max_lag,
        }
    };
    Ok(NormalData {
        train,
        validation,
        stats,
    })
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: MixerModel,
    pub log: Vec<EpochLog>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub data: NormalData,
}

/// Trains the predictor on the normal data; the model carries the
/// normalization statistics.
pub fn fit(normal: &Dataset, config: &DetectorConfig) -> Result<Fitted> {
    config.validate()?;
    let data = prepare_normal(normal, config)?;
    let mixer = config.mixer(normal.n_channels());
    let outcome = train(&data.train.windows, &data.validation.windows, &mixer)?;
    let mut model = outcome.model;
    model.normalization = Some(data.stats.clone());
    Ok(Fitted {
        model,
        log: outcome.log,
        best_epoch: outcome.best_epoch,
        data,
    })
}

/// Samples the normal pattern. With `threshold_quantile` set, a first
/// pass at `h = 0` fixes `h` before the thresholded pattern is drawn from
/// the same windows.
pub fn build_pattern(
    model: &MixerModel,
    train: &WindowSet,
    config: &DetectorConfig,
    workers: Option<usize>,
) -> Result<NormalPattern> {
    let mut options = config.pattern_options();
    options.graph.workers = workers;
    if let Some(q) = config.threshold_quantile {
        options.graph.threshold = 0.0;
        let pilot = sample_normal_pattern(model, &train.windows, &options)?;
        options.graph.threshold = quantile(pilot.mean().data(), q);
    }
    sample_normal_pattern(model, &train.windows, &options)
}

/// Linearly interpolated quantile of `values`, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Normalizes `test` with the model's statistics and windows it.
pub fn test_windows(model: &MixerModel, test: &Dataset, stride: usize) -> Result<WindowSet> {
    if test.n_channels() != model.n_channels() {
        return Err(GcadError::Shape(format!(
            "test data has {} channels, model expects {}",
            test.n_channels(),
            model.n_channels()
        )));
    }
    let normalized = match &model.normalization {
        Some(stats) => stats.apply(test)?,
        None => test.clone(),
    };
    make_windows(&normalized, model.max_lag(), stride)
}

pub fn score(
    model: &MixerModel,
    pattern: &NormalPattern,
    windows: &WindowSet,
    config: &DetectorConfig,
    workers: Option<usize>,
) -> Result<ScoreSeries> {
    Ok(score_windows(model, pattern, &windows.windows, &config.score_options(workers))?.0)
}
