//! Time/feature-mixing MLP predictor and the per-channel gradient
//! generator built on it.
//!
//! Each layer applies a temporal MLP (shared by all channels, mixing the
//! `τ` lags of a channel) followed by a feature MLP (shared by all time
//! steps, mixing the `N` channels at one step), each with a residual
//! connection. The outputs of all layers are summed and a fully connected
//! head maps the flattened `N × τ` result to the `N` next values.

mod train;

pub use train::{mean_mse, train, EpochLog, TrainOutcome};

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MinMaxStats;
use crate::error::{GcadError, Result};
use crate::tensor::{NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub n_channels: usize,
    pub max_lag: usize,
    pub n_layers: usize,
    pub temporal_hidden: usize,
    pub feature_hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Epochs without validation improvement before stopping early;
    /// `None` always runs every epoch.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl MixerConfig {
    pub fn new(n_channels: usize, max_lag: usize) -> Self {
        MixerConfig {
            n_channels,
            max_lag,
            n_layers: 2,
            temporal_hidden: 2 * max_lag,
            feature_hidden: 2 * n_channels,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 64,
            seed: 0,
            optimizer: Optimizer::default(),
            patience: Some(10),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_channels", self.n_channels),
            ("max_lag", self.max_lag),
            ("n_layers", self.n_layers),
            ("temporal_hidden", self.temporal_hidden),
            ("feature_hidden", self.feature_hidden),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(GcadError::Config(format!("{} must be >= 1", name)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GcadError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Two-layer perceptron `relu(x·w1 + b1)·w2 + b2` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl Mlp {
    fn init(width: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Mlp {
            w1: glorot(width, hidden, rng),
            b1: Tensor::zeros(&[hidden]),
            w2: glorot(hidden, width, rng),
            b2: Tensor::zeros(&[width]),
        }
    }

    fn zeroed(width: usize, hidden: usize) -> Self {
        Mlp {
            w1: Tensor::zeros(&[width, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, width]),
            b2: Tensor::zeros(&[width]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixerLayer {
    pub temporal: Mlp,
    pub feature: Mlp,
}

/// A trained (or freshly initialized) predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerModel {
    config: MixerConfig,
    pub layers: Vec<MixerLayer>,
    /// `(N·τ) × N`
    pub head_w: Tensor,
    pub head_b: Tensor,
    /// Normalization fitted on the training split, carried with the model
    /// so that later stages transform data identically.
    pub normalization: Option<MinMaxStats>,
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}

/// `G_t`: gradients of each channel loss with respect to the input window.
///
/// Entry `[i][j][lag]` is `∂L_j / ∂x_{i, t-τ+lag}`, lag 0 being the oldest
/// step of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTensor {
    n: usize,
    tau: usize,
    values: Vec<f64>,
}

impl GradientTensor {
    pub fn new(n: usize, tau: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n * tau {
            return Err(GcadError::Shape(format!(
                "gradient tensor {}x{}x{} needs {} values, got {}",
                n,
                n,
                tau,
                n * n * tau,
                values.len()
            )));
        }
        Ok(GradientTensor { n, tau, values })
    }

    pub fn zeros(n: usize, tau: usize) -> Self {
        GradientTensor {
            n,
            tau,
            values: vec![0.0; n * n * tau],
        }
    }

    pub fn n_channels(&self) -> usize {
        self.n
    }

    pub fn max_lag(&self) -> usize {
        self.tau
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, lag: usize) -> f64 {
        self.values[(i * self.n + j) * self.tau + lag]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, lag: usize, value: f64) {
        self.values[(i * self.n + j) * self.tau + lag] = value;
    }

    /// The `τ` lag gradients of the `(i, j)` pair.
    pub fn lags(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.n + j) * self.tau;
        &self.values[start..start + self.tau]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-channel squared prediction error `(ŷ_j − y_j)²`.
pub fn channel_loss(yhat: &Tensor, y: &Tensor) -> Result<Tensor> {
    if yhat.shape() != y.shape() {
        return Err(GcadError::Shape(format!(
            "prediction shape {:?} differs from target shape {:?}",
            yhat.shape(),
            y.shape()
        )));
    }
    Ok(yhat.sub(y)?.square())
}

/// Parameter leaves and output of one recorded forward pass.
pub(crate) struct Recorded {
    pub params: Vec<NodeId>,
    pub input: NodeId,
    pub output: NodeId,
}

impl MixerModel {
    /// Random Glorot-uniform weights and zero biases, seeded by `config.seed`.
    pub fn new(config: MixerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (n, tau) = (config.n_channels, config.max_lag);
        let layers = (0..config.n_layers)
            .map(|_| MixerLayer {
                temporal: Mlp::init(tau, config.temporal_hidden, &mut rng),
                feature: Mlp::init(n, config.feature_hidden, &mut rng),
            })
            .collect();
        let head_w = glorot(n * tau, n, &mut rng);
        Ok(MixerModel {
            config,
            layers,
            head_w,
            head_b: Tensor::zeros(&[n]),
            normalization: None,
        })
    }

    /// All mixing weights zero, so every layer is the identity and the
    /// model reduces to `ŷ = (L · vec(X)) · head_w + head_b`.
    pub fn linear(config: MixerConfig, head_w: Tensor, head_b: Tensor) -> Result<Self> {
        config.validate()?;
        let (n, tau) = (config.n_channels, config.max_lag);
        head_w.require_shape(&[n * tau, n], "head weight")?;
        head_b.require_shape(&[n], "head bias")?;
        let layers = (0..config.n_layers)
            .map(|_| MixerLayer {
                temporal: Mlp::zeroed(tau, config.temporal_hidden),
                feature: Mlp::zeroed(n, config.feature_hidden),
            })
            .collect();
        Ok(MixerModel {
            config,
            layers,
            head_w,
            head_b,
            normalization: None,
        })
    }

    pub fn config(&self) -> &MixerConfig {
        &self.config
    }

    pub fn n_channels(&self) -> usize {
        self.config.n_channels
    }

    pub fn max_lag(&self) -> usize {
        self.config.max_lag
    }

    /// Zeroes the output head, which forces a zero prediction.
    pub fn zero_head(&mut self) {
        self.head_w = Tensor::zeros(self.head_w.shape());
        self.head_b = Tensor::zeros(self.head_b.shape());
    }

    /// Parameters in a fixed order shared by `params_mut` and `param_names`.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(8 * self.layers.len() + 2);
        for layer in &self.layers {
            for mlp in [&layer.temporal, &layer.feature] {
                out.extend([&mlp.w1, &mlp.b1, &mlp.w2, &mlp.b2]);
            }
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(8 * self.layers.len() + 2);
        for layer in &mut self.layers {
            for mlp in [&mut layer.temporal, &mut layer.feature] {
                out.extend([&mut mlp.w1, &mut mlp.b1, &mut mlp.w2, &mut mlp.b2]);
            }
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.layers.len() {
            for block in ["temporal", "feature"] {
                for p in ["w1", "b1", "w2", "b2"] {
                    out.push(format!("layers.{}.{}.{}", l, block, p));
                }
            }
        }
        out.push("head.w".into());
        out.push("head.b".into());
        out
    }

    fn check_window(&self, window: &Tensor) -> Result<()> {
        window.require_shape(&[self.config.n_channels, self.config.max_lag], "window")?;
        if !window.is_finite() {
            return Err(GcadError::Data("window contains non-finite values".into()));
        }
        Ok(())
    }

    /// Records a forward pass on `tape`.
    pub(crate) fn record(&self, tape: &mut Tape, window: &Tensor) -> Result<Recorded> {
        let (n, tau) = (self.config.n_channels, self.config.max_lag);
        let params: Vec<NodeId> = self.params().into_iter().map(|p| tape.leaf(p.clone())).collect();
        let input = tape.leaf(window.clone());

        let mlp = |tape: &mut Tape, x: NodeId, w: &[NodeId]| -> Result<NodeId> {
            let h = tape.matmul(x, w[0])?;
            let h = tape.add(h, w[1])?;
            let h = tape.relu(h);
            let o = tape.matmul(h, w[2])?;
            tape.add(o, w[3])
        };

        let mut z = input;
        let mut skip: Option<NodeId> = None;
        for l in 0..self.layers.len() {
            let w = &params[8 * l..8 * l + 8];
            // temporal mixing: rows are channels, columns are lags
            let t = mlp(tape, z, &w[0..4])?;
            let u = tape.add(z, t)?;
            // feature mixing: rows are lags, columns are channels
            let ut = tape.transpose(u)?;
            let f = mlp(tape, ut, &w[4..8])?;
            let f = tape.transpose(f)?;
            z = tape.add(u, f)?;
            skip = Some(match skip {
                Some(s) => tape.add(s, z)?,
                None => z,
            });
        }
        let mixed = skip.expect("at least one layer");
        let flat = tape.reshape(mixed, &[1, n * tau])?;
        let head_w = params[params.len() - 2];
        let head_b = params[params.len() - 1];
        let out = tape.matmul(flat, head_w)?;
        let out = tape.add(out, head_b)?;
        let output = tape.reshape(out, &[n])?;
        Ok(Recorded {
            params,
            input,
            output,
        })
    }

    /// Predicts `x_t` from the `N × τ` window of the preceding steps.
    pub fn forward(&self, window: &Tensor) -> Result<Tensor> {
        self.check_window(window)?;
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, window)?;
        let out = tape.value(rec.output).clone();
        if !out.is_finite() {
            return Err(GcadError::Numeric("forward pass produced non-finite output".into()));
        }
        Ok(out)
    }

    /// Channel-separated gradients: one reverse pass per output channel,
    /// each from `L_j = (ŷ_j − y_j)²` back to the input window.
    pub fn input_gradients(&self, window: &Tensor, y_true: &Tensor) -> Result<GradientTensor> {
        self.check_window(window)?;
        let (n, tau) = (self.config.n_channels, self.config.max_lag);
        y_true.require_shape(&[n], "target")?;
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, window)?;
        if !tape.value(rec.output).is_finite() {
            return Err(GcadError::Numeric("forward pass produced non-finite output".into()));
        }
        let target = tape.leaf(y_true.clone());
        let residual = tape.sub(rec.output, target)?;

        let mut g = GradientTensor::zeros(n, tau);
        for j in 0..n {
            let r = tape.select(residual, j)?;
            let loss = tape.square(r);
            let grads = tape.backward(loss)?;
            let dx = grads.get(rec.input);
            for i in 0..n {
                for lag in 0..tau {
                    let v = dx.at(i, lag);
                    if !v.is_finite() {
                        return Err(GcadError::Numeric(format!(
                            "non-finite gradient for channel {} at ({}, {})",
                            j, i, lag
                        )));
                    }
                    g.set(i, j, lag, v);
                }
            }
        }
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        let weights = self
            .param_names()
            .into_iter()
            .zip(self.params())
            .map(|(name, t)| {
                let arr = if t.shape().len() == 2 {
                    WeightArray::Matrix(t.to_rows())
                } else {
                    WeightArray::Vector(t.data().to_vec())
                };
                (name, arr)
            })
            .collect();
        let file = ModelFile {
            n_channels: self.config.n_channels,
            max_lag: self.config.max_lag,
            config: self.config.clone(),
            weights,
            normalization: self.normalization.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut file: ModelFile = serde_json::from_str(text)?;
        if file.n_channels != file.config.n_channels || file.max_lag != file.config.max_lag {
            return Err(GcadError::Shape(
                "model header N/τ disagree with its config".into(),
            ));
        }
        let mut model = MixerModel::new(file.config.clone())?;
        let names = model.param_names();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let arr = file
                .weights
                .remove(name)
                .ok_or_else(|| GcadError::Shape(format!("model file is missing '{}'", name)))?;
            let t = match arr {
                WeightArray::Matrix(rows) => Tensor::from_rows(&rows)?,
                WeightArray::Vector(v) => Tensor::vector(v),
            };
            // from_rows on an empty row list loses the column count
            if t.shape() != slot.shape() {
                return Err(GcadError::Shape(format!(
                    "weight '{}' has shape {:?}, config requires {:?}",
                    name,
                    t.shape(),
                    slot.shape()
                )));
            }
            if !t.is_finite() {
                return Err(GcadError::Data(format!("weight '{}' is not finite", name)));
            }
            *slot = t;
        }
        if let Some(extra) = file.weights.keys().next() {
            return Err(GcadError::Shape(format!("unexpected weight '{}'", extra)));
        }
        if let Some(stats) = &file.normalization {
            if stats.min.len() != file.n_channels || stats.max.len() != file.n_channels {
                return Err(GcadError::Shape(
                    "normalization statistics do not match N".into(),
                ));
            }
        }
        model.normalization = file.normalization;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| GcadError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GcadError::io(path, e))?;
        MixerModel::from_json(&text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WeightArray {
    Matrix(Vec<Vec<f64>>),
    Vector(Vec<f64>),
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    n_channels: usize,
    max_lag: usize,
    config: MixerConfig,
    weights: BTreeMap<String, WeightArray>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<MinMaxStats>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MixerConfig {
        let mut c = MixerConfig::new(3, 4);
        c.seed = 11;
        c
    }

    fn window(n: usize, tau: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * tau).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![n, tau], data).unwrap()
    }

    #[test]
    fn zero_head_predicts_zero() {
        let mut m = MixerModel::new(small()).unwrap();
        m.zero_head();
        let y = m.forward(&window(3, 4, 1)).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
        let g = m
            .input_gradients(&window(3, 4, 1), &Tensor::vector(vec![0.3, -1.0, 2.0]))
            .unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = MixerModel::new(small()).unwrap();
        let x = window(3, 4, 2);
        assert_eq!(m.forward(&x).unwrap(), m.forward(&x).unwrap());
        assert_eq!(m, MixerModel::new(small()).unwrap());
    }

    #[test]
    fn forward_rejects_bad_windows() {
        let m = MixerModel::new(small()).unwrap();
        assert!(matches!(
            m.forward(&window(4, 3, 0)),
            Err(GcadError::Shape(_))
        ));
        let mut bad = window(3, 4, 0);
        bad.data_mut()[5] = f64::NAN;
        assert!(matches!(m.forward(&bad), Err(GcadError::Data(_))));
    }

    #[test]
    fn channel_loss_definition() {
        let y = Tensor::vector(vec![0.0, 1.0]);
        assert_eq!(
            channel_loss(&Tensor::vector(vec![1.0, 3.0]), &y).unwrap().data(),
            &[1.0, 4.0]
        );
        assert_eq!(channel_loss(&y, &y).unwrap().data(), &[0.0, 0.0]);
        assert!(channel_loss(&y, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let mut m = MixerModel::new(small()).unwrap();
        m.normalization = Some(MinMaxStats {
            min: vec![0.0; 3],
            max: vec![1.0; 3],
        });
        let text = m.to_json().unwrap();
        assert_eq!(MixerModel::from_json(&text).unwrap(), m);

        let tampered = text.replacen("\"max_lag\": 4", "\"max_lag\": 5", 1);
        assert!(MixerModel::from_json(&tampered).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.n_layers = 0;
        assert!(matches!(MixerModel::new(c), Err(GcadError::Config(_))));
        let mut c = small();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
