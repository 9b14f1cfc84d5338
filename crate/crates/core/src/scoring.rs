//! Normal causal pattern estimation and deviation scoring.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causality::{batch_graphs, par_map, GraphOptions, SparseCausalGraph};
use crate::data::Window;
use crate::error::{GcadError, Result};
use crate::predictor::{channel_loss, MixerModel};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_BERNOULLI_P: f64 = 0.2;
const MAX_SAMPLING_ATTEMPTS: u64 = 10;

/// `Ā_norm`: the mean graph over Bernoulli-sampled training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalPattern {
    pub n_channels: usize,
    pub max_lag: usize,
    pub mean_graph: Vec<Vec<f64>>,
    pub n_samples: usize,
    pub bernoulli_p: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub graph: GraphOptions,
}

impl NormalPattern {
    /// A pattern wrapping a known mean graph, mostly for tests and tooling.
    pub fn from_mean(mean: &Tensor, epsilon: f64) -> Result<Self> {
        let n = mean.rows();
        mean.require_shape(&[n, n], "mean graph")?;
        if mean.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GcadError::Data("mean graph must be non-negative".into()));
        }
        check_epsilon(epsilon)?;
        Ok(NormalPattern {
            n_channels: n,
            max_lag: 0,
            mean_graph: mean.to_rows(),
            n_samples: 1,
            bernoulli_p: 1.0,
            epsilon,
            seed: 0,
            graph: GraphOptions::new(0.0),
        })
    }

    pub fn mean(&self) -> Tensor {
        Tensor::from_rows(&self.mean_graph).expect("rectangular mean graph")
    }

    pub fn validate(&self) -> Result<()> {
        let m = Tensor::from_rows(&self.mean_graph)?;
        m.require_shape(&[self.n_channels, self.n_channels], "mean graph")?;
        if m.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GcadError::Data("mean graph must be non-negative".into()));
        }
        if self.n_samples == 0 {
            return Err(GcadError::Data("pattern built from zero samples".into()));
        }
        check_p(self.bernoulli_p)?;
        check_epsilon(self.epsilon)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| GcadError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GcadError::io(path, e))?;
        let pattern: NormalPattern = serde_json::from_str(&text)?;
        pattern.validate()?;
        Ok(pattern)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(GcadError::Config(format!(
            "Bernoulli probability must be in (0, 1], got {}",
            p
        )));
    }
    Ok(())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(GcadError::Config(format!("epsilon must be >= 0, got {}", eps)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternOptions {
    pub bernoulli_p: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub graph: GraphOptions,
}

impl Default for PatternOptions {
    fn default() -> Self {
        PatternOptions {
            bernoulli_p: DEFAULT_BERNOULLI_P,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            graph: GraphOptions::new(0.0),
        }
    }
}

/// Seed used for sampling attempt `attempt` (0-based).
pub fn attempt_seed(seed: u64, attempt: u64) -> u64 {
    seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Indices kept by one Bernoulli(`p`) draw per window.
pub fn bernoulli_keep(count: usize, p: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).filter(|_| rng.random_bool(p)).collect()
}

/// Keeps each window with probability `p` (retrying an empty draw with a
/// derived seed, up to ten attempts) and returns the kept indices.
pub fn sample_indices(count: usize, p: f64, seed: u64) -> Result<Vec<usize>> {
    check_p(p)?;
    if count == 0 {
        return Err(GcadError::Data("no training windows to sample".into()));
    }
    for attempt in 0..MAX_SAMPLING_ATTEMPTS {
        let kept = bernoulli_keep(count, p, attempt_seed(seed, attempt));
        if !kept.is_empty() {
            return Ok(kept);
        }
    }
    Err(GcadError::Sampling(format!(
        "no windows kept after {} attempts with p = {}; use a larger p",
        MAX_SAMPLING_ATTEMPTS, p
    )))
}

/// Entrywise mean of equally shaped graphs.
pub fn mean_graph(graphs: &[SparseCausalGraph]) -> Result<Tensor> {
    let first = graphs
        .first()
        .ok_or_else(|| GcadError::Data("cannot average zero graphs".into()))?;
    let mut acc = Tensor::zeros(first.values().shape());
    for g in graphs {
        g.values().require_shape(acc.shape(), "graph")?;
        acc.add_assign(g.values());
    }
    Ok(acc.scale(1.0 / graphs.len() as f64))
}

/// Builds `Ā_norm` from a Bernoulli sample of the training windows.
pub fn sample_normal_pattern(
    model: &MixerModel,
    train_windows: &[Window],
    options: &PatternOptions,
) -> Result<NormalPattern> {
    check_epsilon(options.epsilon)?;
    let kept = sample_indices(train_windows.len(), options.bernoulli_p, options.seed)?;
    let subset: Vec<Window> = kept.iter().map(|&i| train_windows[i].clone()).collect();
    let graphs = batch_graphs(model, &subset, &options.graph)?;
    let mean = mean_graph(&graphs)?;
    Ok(NormalPattern {
        n_channels: model.n_channels(),
        max_lag: model.max_lag(),
        mean_graph: mean.to_rows(),
        n_samples: graphs.len(),
        bernoulli_p: options.bernoulli_p,
        epsilon: options.epsilon,
        seed: options.seed,
        graph: options.graph.with_workers(None),
    })
}

/// Relative deviations split into the diagonal and off-diagonal sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationParts {
    pub diagonal: f64,
    pub off_diagonal: f64,
}

impl DeviationParts {
    pub fn total(&self) -> f64 {
        self.diagonal + self.off_diagonal
    }
}

fn check_pair(test: &SparseCausalGraph, normal: &NormalPattern) -> Result<()> {
    let n = normal.mean_graph.len();
    test.values().require_shape(&[n, n], "test graph")?;
    if normal.mean_graph.iter().any(|r| r.len() != n) {
        return Err(GcadError::Shape("mean graph is not square".into()));
    }
    Ok(())
}

/// `Σ |Ã_test − Ā_norm| / (Ā_norm + ε)`, diagonal and off-diagonal kept apart.
pub fn deviation_parts(test: &SparseCausalGraph, normal: &NormalPattern) -> Result<DeviationParts> {
    check_pair(test, normal)?;
    let eps = normal.epsilon;
    let mut parts = DeviationParts {
        diagonal: 0.0,
        off_diagonal: 0.0,
    };
    for (i, row) in normal.mean_graph.iter().enumerate() {
        for (j, &m) in row.iter().enumerate() {
            let d = (test.get(i, j) - m).abs() / (m + eps);
            if i == j {
                parts.diagonal += d;
            } else {
                parts.off_diagonal += d;
            }
        }
    }
    Ok(parts)
}

/// `Sc`: relative L1 deviation over all `N²` entries.
pub fn causal_deviation(test: &SparseCausalGraph, normal: &NormalPattern) -> Result<f64> {
    Ok(deviation_parts(test, normal)?.total())
}

/// `St`: the same deviation restricted to the diagonal.
pub fn time_deviation(test: &SparseCausalGraph, normal: &NormalPattern) -> Result<f64> {
    Ok(deviation_parts(test, normal)?.diagonal)
}

/// `D = |Ã_test − Ā_norm|` entrywise.
pub fn deviation_matrix(test: &SparseCausalGraph, normal: &NormalPattern) -> Result<Tensor> {
    check_pair(test, normal)?;
    Ok(test.values().sub(&normal.mean())?.map(f64::abs))
}

/// Per-window scores aligned to prediction timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub timestamps: Vec<usize>,
    pub sc: Vec<f64>,
    pub st: Vec<f64>,
    pub s: Vec<f64>,
    pub beta: f64,
}

/// `S = Sc + β · St`, with timestamps `0..len`.
pub fn combine(sc: &[f64], st: &[f64], beta: f64) -> Result<ScoreSeries> {
    combine_at((0..sc.len()).collect(), sc, st, beta)
}

pub fn combine_at(timestamps: Vec<usize>, sc: &[f64], st: &[f64], beta: f64) -> Result<ScoreSeries> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(GcadError::Config(format!("beta must be >= 0, got {}", beta)));
    }
    if sc.len() != st.len() || sc.len() != timestamps.len() {
        return Err(GcadError::Shape(format!(
            "score lengths differ: {} timestamps, {} sc, {} st",
            timestamps.len(),
            sc.len(),
            st.len()
        )));
    }
    let s = sc.iter().zip(st).map(|(c, t)| c + beta * t).collect();
    Ok(ScoreSeries {
        timestamps,
        sc: sc.to_vec(),
        st: st.to_vec(),
        s,
        beta,
    })
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,sc,st,s\n");
        for k in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.timestamps[k], self.sc[k], self.st[k], self.s[k]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| GcadError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != ["t", "sc", "st", "s"] {
            return Err(GcadError::Data(format!(
                "{} must have columns t,sc,st,s",
                path.display()
            )));
        }
        let mut series = ScoreSeries {
            timestamps: vec![],
            sc: vec![],
            st: vec![],
            s: vec![],
            beta: f64::NAN,
        };
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let bad = |col: &str| GcadError::Data(format!("row {}, column '{}' is invalid", row, col));
            series
                .timestamps
                .push(rec[0].trim().parse().map_err(|_| bad("t"))?);
            series.sc.push(rec[1].trim().parse().map_err(|_| bad("sc"))?);
            series.st.push(rec[2].trim().parse().map_err(|_| bad("st"))?);
            series.s.push(rec[3].trim().parse().map_err(|_| bad("s"))?);
        }
        Ok(series)
    }
}

/// Score-time switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub beta: f64,
    /// When false the diagonal is dropped from `Sc` and `St` is zero,
    /// i.e. temporal self-dependence is ignored entirely.
    pub temporal: bool,
    pub workers: Option<usize>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            beta: 0.0,
            temporal: true,
            workers: None,
        }
    }
}

/// Scores precomputed test graphs against `normal`.
pub fn score_graphs(
    graphs: &[SparseCausalGraph],
    timestamps: Vec<usize>,
    normal: &NormalPattern,
    options: &ScoreOptions,
) -> Result<ScoreSeries> {
    let parts = graphs
        .iter()
        .enumerate()
        .map(|(index, g)| {
            deviation_parts(g, normal).map_err(|e| GcadError::Window {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (sc, st): (Vec<f64>, Vec<f64>) = parts
        .iter()
        .map(|p| {
            if options.temporal {
                (p.total(), p.diagonal)
            } else {
                (p.off_diagonal, 0.0)
            }
        })
        .unzip();
    combine_at(timestamps, &sc, &st, options.beta)
}

/// Builds each window's graph with the pattern's own graph options and
/// scores it. Returns the graphs alongside the scores.
pub fn score_windows(
    model: &MixerModel,
    normal: &NormalPattern,
    windows: &[Window],
    options: &ScoreOptions,
) -> Result<(ScoreSeries, Vec<SparseCausalGraph>)> {
    if model.n_channels() != normal.n_channels
        || (normal.max_lag != 0 && model.max_lag() != normal.max_lag)
    {
        return Err(GcadError::Shape(format!(
            "model is N={} τ={} but pattern is N={} τ={}",
            model.n_channels(),
            model.max_lag(),
            normal.n_channels,
            normal.max_lag
        )));
    }
    let graph_opts = normal.graph.with_workers(options.workers);
    let graphs = batch_graphs(model, windows, &graph_opts)?;
    let timestamps = windows.iter().map(|w| w.target).collect();
    let scores = score_graphs(&graphs, timestamps, normal, options)?;
    Ok((scores, graphs))
}

/// Sum of channel losses per window: the plain prediction-error score.
pub fn prediction_error_scores(
    model: &MixerModel,
    windows: &[Window],
    workers: Option<usize>,
) -> Result<Vec<f64>> {
    par_map(windows, workers, |_, w| {
        Ok(channel_loss(&model.forward(&w.x)?, &w.y)?.sum())
    })
}
