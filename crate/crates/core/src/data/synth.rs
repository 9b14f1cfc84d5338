//! Vector-autoregressive benchmark generator with a known causal graph
//! and injected structural anomalies.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{GcadError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    None,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Removes every lag of the `from → to` coefficient.
    SeverEdge { from: usize, to: usize },
    /// Adds `magnitude` to channel `channel` at every step.
    Spike { channel: usize, magnitude: f64 },
    /// Moves the `source → from` coefficients onto `source → to`.
    Rewire {
        source: usize,
        from: usize,
        to: usize,
    },
}

/// A structural edit active on test steps `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub start: usize,
    pub end: usize,
    pub kind: AnomalyKind,
}

/// Generator description.
///
/// `coefficients[k][i][j]` is the weight of `x_{t-1-k, i}` in `x_{t, j}`,
/// so channel `i` Granger-causes `j` exactly when some lag is non-zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_channels: usize,
    pub train_length: usize,
    pub test_length: usize,
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub noise_std: f64,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub anomalies: Vec<Anomaly>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_burn_in() -> usize {
    500
}

/// Generated train/test split plus the ground truth that produced it.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: Dataset,
    pub test: Dataset,
    pub adjacency: Vec<Vec<bool>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::default_benchmark()
    }
}

impl SynthSpec {
    /// Five channels, two lags, six cross-channel edges, noise 0.1,
    /// 10 000 training steps and 5 000 test steps with three 200-step
    /// structural anomalies (sever, rewire, sever).
    ///
    /// Channels 0 and 3 are slow independent drivers; 1, 2 and 4 each
    /// follow both of them.
    pub fn default_benchmark() -> Self {
        let n = 5;
        let mut lag1 = vec![vec![0.0; n]; n];
        let mut lag2 = vec![vec![0.0; n]; n];
        for (i, a) in [0.99, 0.3, 0.3, 0.99, 0.3].into_iter().enumerate() {
            lag1[i][i] = a;
        }
        for &(i, j, a, b) in &[
            (0, 1, 1.5, 0.0),
            (3, 1, 0.0, 1.0),
            (3, 2, 1.5, 0.0),
            (0, 2, 0.0, -1.0),
            (0, 4, 1.0, 0.0),
            (3, 4, -1.0, 0.0),
        ] {
            lag1[i][j] = a;
            lag2[i][j] = b;
        }
        SynthSpec {
            n_channels: n,
            train_length: 10_000,
            test_length: 5_000,
            coefficients: vec![lag1, lag2],
            noise_std: 0.1,
            nonlinearity: Nonlinearity::None,
            anomalies: vec![
                Anomaly {
                    start: 1000,
                    end: 1200,
                    kind: AnomalyKind::SeverEdge { from: 0, to: 1 },
                },
                Anomaly {
                    start: 2500,
                    end: 2700,
                    kind: AnomalyKind::Rewire {
                        source: 3,
                        from: 2,
                        to: 1,
                    },
                },
                Anomaly {
                    start: 4000,
                    end: 4200,
                    kind: AnomalyKind::SeverEdge { from: 0, to: 4 },
                },
            ],
            seed: 7,
            burn_in: default_burn_in(),
        }
    }

    /// The default benchmark with every anomaly interval severing an edge.
    pub fn sever_scenario() -> Self {
        let mut spec = SynthSpec::default_benchmark();
        spec.anomalies[1].kind = AnomalyKind::SeverEdge { from: 3, to: 2 };
        spec
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// Ground-truth Granger graph, `[i][j]` true when `i` drives `j`.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.n_channels;
        let mut adj = vec![vec![false; n]; n];
        for lag in &self.coefficients {
            for (i, row) in lag.iter().enumerate() {
                for (j, &c) in row.iter().enumerate() {
                    if c != 0.0 {
                        adj[i][j] = true;
                    }
                }
            }
        }
        adj
    }

    /// Largest eigenvalue modulus of the VAR companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        let n = self.n_channels;
        let p = self.order();
        let dim = n * p;
        let mut companion = DMatrix::<f64>::zeros(dim, dim);
        for (k, lag) in self.coefficients.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    // row j (target), column block k, column i (source)
                    companion[(j, k * n + i)] = lag[i][j];
                }
            }
        }
        for r in n..dim {
            companion[(r, r - n)] = 1.0;
        }
        companion
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_channels;
        if n == 0 {
            return Err(GcadError::Config("n_channels must be >= 1".into()));
        }
        if self.coefficients.is_empty() {
            return Err(GcadError::Config("VAR order must be >= 1".into()));
        }
        for (k, lag) in self.coefficients.iter().enumerate() {
            if lag.len() != n || lag.iter().any(|row| row.len() != n) {
                return Err(GcadError::Config(format!(
                    "coefficients for lag {} must be {}x{}",
                    k + 1,
                    n,
                    n
                )));
            }
            if lag.iter().flatten().any(|c| !c.is_finite()) {
                return Err(GcadError::Config(format!(
                    "coefficients for lag {} contain non-finite values",
                    k + 1
                )));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(GcadError::Config(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        if self.train_length <= self.order() || self.test_length == 0 {
            return Err(GcadError::Config(format!(
                "train_length must exceed the VAR order and test_length must be >= 1 (got {} and {})",
                self.train_length, self.test_length
            )));
        }
        let radius = self.spectral_radius();
        if radius.is_nan() || radius >= 1.0 {
            return Err(GcadError::Config(format!(
                "coefficients are not stationary: companion spectral radius {:.4} >= 1",
                radius
            )));
        }
        for (idx, a) in self.anomalies.iter().enumerate() {
            if a.start >= a.end || a.end > self.test_length {
                return Err(GcadError::Config(format!(
                    "anomaly {} interval [{}, {}) is empty or outside [0, {})",
                    idx, a.start, a.end, self.test_length
                )));
            }
            let channels: Vec<usize> = match a.kind {
                AnomalyKind::SeverEdge { from, to } => vec![from, to],
                AnomalyKind::Spike { channel, magnitude } => {
                    if !magnitude.is_finite() {
                        return Err(GcadError::Config(format!(
                            "anomaly {} has non-finite magnitude",
                            idx
                        )));
                    }
                    vec![channel]
                }
                AnomalyKind::Rewire { source, from, to } => vec![source, from, to],
            };
            if let Some(&c) = channels.iter().find(|&&c| c >= n) {
                return Err(GcadError::Config(format!(
                    "anomaly {} references channel {} but there are {}",
                    idx, c, n
                )));
            }
        }
        Ok(())
    }

    /// Coefficients in effect at test step `step` (`None` during training).
    fn coefficients_at(&self, step: Option<usize>) -> Vec<Vec<Vec<f64>>> {
        let mut coef = self.coefficients.clone();
        let Some(step) = step else {
            return coef;
        };
        for a in &self.anomalies {
            if step < a.start || step >= a.end {
                continue;
            }
            match a.kind {
                AnomalyKind::SeverEdge { from, to } => {
                    for lag in coef.iter_mut() {
                        lag[from][to] = 0.0;
                    }
                }
                AnomalyKind::Rewire { source, from, to } => {
                    for lag in coef.iter_mut() {
                        let moved = lag[source][from];
                        lag[source][from] = 0.0;
                        lag[source][to] += moved;
                    }
                }
                AnomalyKind::Spike { .. } => {}
            }
        }
        coef
    }

    fn spike_at(&self, step: usize) -> Vec<f64> {
        let mut offset = vec![0.0; self.n_channels];
        for a in &self.anomalies {
            if let AnomalyKind::Spike { channel, magnitude } = a.kind {
                if (a.start..a.end).contains(&step) {
                    offset[channel] += magnitude;
                }
            }
        }
        offset
    }

    /// Runs the recurrence. The training segment is anomaly-free; test
    /// labels mark the union of anomaly intervals.
    pub fn generate(&self) -> Result<SynthOutput> {
        self.validate()?;
        let n = self.n_channels;
        let p = self.order();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_std)
            .map_err(|e| GcadError::Config(format!("noise distribution: {}", e)))?;
        let init = Normal::new(0.0, 1.0).expect("unit normal");

        let warmup = p + self.burn_in;
        let total = warmup + self.train_length + self.test_length;
        let mut series: Vec<Vec<f64>> = Vec::with_capacity(total);
        for _ in 0..p {
            series.push((0..n).map(|_| init.sample(&mut rng)).collect());
        }
        let base = self.coefficients_at(None);
        let anomalous_steps: Vec<bool> = (0..self.test_length)
            .map(|s| self.anomalies.iter().any(|a| (a.start..a.end).contains(&s)))
            .collect();

        for t in p..total {
            let test_step = t.checked_sub(warmup + self.train_length);
            let special = test_step.is_some_and(|s| anomalous_steps[s]);
            let owned;
            let coef = if special {
                owned = self.coefficients_at(test_step);
                &owned
            } else {
                &base
            };
            let mut next = vec![0.0; n];
            for (k, lag) in coef.iter().enumerate() {
                let past = &series[t - 1 - k];
                for (i, row) in lag.iter().enumerate() {
                    let xi = past[i];
                    for (j, &c) in row.iter().enumerate() {
                        next[j] += c * xi;
                    }
                }
            }
            if self.nonlinearity == Nonlinearity::Tanh {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            if self.noise_std > 0.0 {
                for v in next.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            if special {
                for (v, o) in next.iter_mut().zip(self.spike_at(test_step.unwrap_or(0))) {
                    *v += o;
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(GcadError::Numeric(format!(
                    "generated series became non-finite at step {}",
                    t
                )));
            }
            series.push(next);
        }

        let to_dataset = |rows: &[Vec<f64>], labels: Option<Vec<bool>>| -> Result<Dataset> {
            let data: Vec<f64> = rows.iter().flatten().copied().collect();
            Dataset::new(
                Tensor::new(vec![rows.len(), n], data)?,
                labels,
                (0..n).map(|i| format!("x{}", i)).collect(),
            )
        };
        let train = to_dataset(&series[warmup..warmup + self.train_length], None)?;
        let test = to_dataset(&series[warmup + self.train_length..], Some(anomalous_steps))?;
        Ok(SynthOutput {
            train,
            test,
            adjacency: self.adjacency(),
        })
    }
}
