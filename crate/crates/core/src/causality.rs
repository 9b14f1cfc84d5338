//! Granger effect strengths from gradient tensors and their sparsified graphs.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{GcadError, Result};
use crate::predictor::{GradientTensor, MixerModel};
use crate::tensor::Tensor;

/// `A`, with `[i][j]` the strength with which channel `i` drives channel `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalityMatrix {
    values: Tensor,
}

impl CausalityMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        square_size(&values)?;
        if values.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GcadError::Data(
                "causality entries must be finite and non-negative".into(),
            ));
        }
        Ok(CausalityMatrix { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn n_channels(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.at(i, j)
    }
}

/// `Ã`: the antisymmetrized, thresholded causality graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCausalGraph {
    values: Tensor,
    threshold: f64,
}

impl SparseCausalGraph {
    /// Wraps an arbitrary non-negative square matrix, e.g. a graph read
    /// back from disk or built for an ablation.
    pub fn from_values(values: Tensor, threshold: f64) -> Result<Self> {
        let a = CausalityMatrix::new(values)?;
        Ok(SparseCausalGraph {
            values: a.values,
            threshold,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn n_channels(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.at(i, j)
    }
}

fn square_size(t: &Tensor) -> Result<usize> {
    match t.shape() {
        [r, c] if r == c => Ok(*r),
        other => Err(GcadError::Shape(format!(
            "expected a square matrix, got shape {:?}",
            other
        ))),
    }
}

/// `a_ij = (1/τ) Σ_lag |G[i][j][lag]|`: the lag integral of the absolute
/// channel-separated gradient under a uniform weighting, estimated at the
/// observed window.
pub fn quantify(g: &GradientTensor) -> Result<CausalityMatrix> {
    let (n, tau) = (g.n_channels(), g.max_lag());
    if tau == 0 || n == 0 {
        return Err(GcadError::Shape(format!(
            "gradient tensor {}x{}x{} is empty",
            n, n, tau
        )));
    }
    if g.values().iter().any(|v| !v.is_finite()) {
        return Err(GcadError::Numeric("gradient tensor is not finite".into()));
    }
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let s: f64 = g.lags(i, j).iter().map(|v| v.abs()).sum();
            a.set(i, j, s / tau as f64);
        }
    }
    Ok(CausalityMatrix { values: a })
}

/// Removes the symmetric part of every off-diagonal pair, keeps the
/// diagonal, then zeroes every entry below `h`.
pub fn sparsify(a: &CausalityMatrix, h: f64) -> Result<SparseCausalGraph> {
    check_threshold(h)?;
    let n = a.n_channels();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j {
                a.get(i, i)
            } else {
                (a.get(i, j) - a.get(j, i)).max(0.0)
            };
            out.set(i, j, if v < h { 0.0 } else { v });
        }
    }
    Ok(SparseCausalGraph {
        values: out,
        threshold: h,
    })
}

fn check_threshold(h: f64) -> Result<()> {
    if !(h >= 0.0 && h.is_finite()) {
        return Err(GcadError::Config(format!(
            "sparsity threshold must be finite and >= 0, got {}",
            h
        )));
    }
    Ok(())
}

/// How a window's causality matrix becomes a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphOptions {
    /// Sparsity threshold `h`.
    pub threshold: f64,
    /// Apply the `max(0, A − Aᵀ)` step. Turning this off (with `h = 0`)
    /// uses the raw matrix, as in the no-sparsification ablation.
    pub antisymmetrize: bool,
    /// Averages `|G|` over Gaussian-perturbed copies of each window
    /// instead of using the observed window alone.
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
    /// Worker threads; `None` uses the global pool, `Some(1)` runs serially.
    #[serde(skip)]
    pub workers: Option<usize>,
}

/// Monte-Carlo estimate of the lag integral: `samples` windows drawn as
/// `X + N(0, std²)` entrywise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub samples: usize,
    pub std: f64,
    pub seed: u64,
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(GcadError::Config("perturbation samples must be >= 1".into()));
        }
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return Err(GcadError::Config(format!(
                "perturbation std must be finite and >= 0, got {}",
                self.std
            )));
        }
        Ok(())
    }

    /// Mean causality matrix over the perturbed copies of window `index`.
    /// Each window index draws from its own stream, so results do not
    /// depend on scheduling.
    pub fn matrix(&self, model: &MixerModel, w: &Window, index: usize) -> Result<CausalityMatrix> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let noise = Normal::new(0.0, self.std)
            .map_err(|e| GcadError::Config(format!("perturbation: {}", e)))?;
        let n = model.n_channels();
        let mut acc = Tensor::zeros(&[n, n]);
        for _ in 0..self.samples {
            let mut x = w.x.clone();
            for v in x.data_mut() {
                *v += noise.sample(&mut rng);
            }
            let a = quantify(&model.input_gradients(&x, &w.y)?)?;
            acc = acc.add(a.values())?;
        }
        CausalityMatrix::new(acc.scale(1.0 / self.samples as f64))
    }
}

impl GraphOptions {
    pub fn new(threshold: f64) -> Self {
        GraphOptions {
            threshold,
            antisymmetrize: true,
            perturbation: None,
            workers: None,
        }
    }

    /// Raw `A` with no subtraction and no threshold.
    pub fn unsparsified() -> Self {
        GraphOptions {
            threshold: 0.0,
            antisymmetrize: false,
            perturbation: None,
            workers: None,
        }
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn graph(&self, a: &CausalityMatrix) -> Result<SparseCausalGraph> {
        if self.antisymmetrize {
            sparsify(a, self.threshold)
        } else {
            check_threshold(self.threshold)?;
            let values = a
                .values
                .map(|v| if v < self.threshold { 0.0 } else { v });
            Ok(SparseCausalGraph {
                values,
                threshold: self.threshold,
            })
        }
    }
}

/// Runs `f` over `items` on `workers` threads, preserving order.
pub(crate) fn par_map<T, U, F>(items: &[T], workers: Option<usize>, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync + Send,
{
    let wrap = |(index, item): (usize, &T)| {
        f(index, item).map_err(|e| GcadError::Window {
            index,
            source: Box::new(e),
        })
    };
    match workers {
        Some(1) => items.iter().enumerate().map(wrap).collect(),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| GcadError::Config(format!("thread pool: {}", e)))?;
            pool.install(|| items.par_iter().enumerate().map(wrap).collect())
        }
        None => items.par_iter().enumerate().map(wrap).collect(),
    }
}

/// Raw causality matrices for every window, in window order.
pub fn batch_matrices(
    model: &MixerModel,
    windows: &[Window],
    workers: Option<usize>,
) -> Result<Vec<CausalityMatrix>> {
    par_map(windows, workers, |_, w| {
        quantify(&model.input_gradients(&w.x, &w.y)?)
    })
}

/// `sparsify(quantify(input_gradients(model, w)), h)` for every window.
pub fn batch_graphs(
    model: &MixerModel,
    windows: &[Window],
    options: &GraphOptions,
) -> Result<Vec<SparseCausalGraph>> {
    check_threshold(options.threshold)?;
    if let Some(p) = &options.perturbation {
        p.validate()?;
    }
    par_map(windows, options.workers, |index, w| {
        let a = match &options.perturbation {
            Some(p) => p.matrix(model, w, index)?,
            None => quantify(&model.input_gradients(&w.x, &w.y)?)?,
        };
        options.graph(&a)
    })
}

/// `N` rows of `N` comma-separated values.
pub fn matrix_to_csv(m: &Tensor) -> String {
    let mut out = String::new();
    for row in m.to_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_to_json(m: &Tensor) -> Result<String> {
    Ok(serde_json::to_string(&m.to_rows())?)
}

/// Writes `m` as CSV or JSON depending on the file extension.
pub fn write_matrix(m: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => matrix_to_json(m)?,
        _ => matrix_to_csv(m),
    };
    std::fs::write(path, text).map_err(|e| GcadError::io(path, e))
}
