//! Python bindings: datasets, the detector pipeline and the metrics.

use gcad::causality::GraphOptions;
use gcad::data::split_train_val;
use gcad::pipeline::{self, DetectorConfig};
use gcad::{GcadError, Tensor};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde_json::Value;

create_exception!(gcad, GcadRuntimeError, PyException, "Numeric, training or sampling failure.");

fn err(e: GcadError) -> PyErr {
    if e.is_runtime() {
        GcadRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

type Rows = Vec<Vec<f64>>;
type EpochRow = (usize, f64, Option<f64>);

#[pyclass(name = "Dataset", module = "gcad", from_py_object)]
#[derive(Clone)]
struct PyDataset(gcad::Dataset);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (rows, labels=None))]
    fn new(rows: Rows, labels: Option<Vec<bool>>) -> PyResult<Self> {
        gcad::Dataset::from_rows(&rows, labels).map(PyDataset).map_err(err)
    }

    /// Reads a CSV; a final `label` column becomes the labels.
    #[staticmethod]
    fn load_csv(path: &str) -> PyResult<Self> {
        gcad::data::load_csv_auto(path).map(PyDataset).map_err(err)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.0.write_csv(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.0.n_channels()
    }

    fn rows(&self) -> Rows {
        self.0.values().to_rows()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<bool>> {
        self.0.labels().map(<[bool]>::to_vec)
    }

    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        if start > end || end > self.0.len() {
            return Err(PyValueError::new_err(format!(
                "slice {}..{} outside 0..{}",
                start,
                end,
                self.0.len()
            )));
        }
        Ok(PyDataset(self.0.slice(start, end)))
    }
}

#[pyclass(name = "SynthSpec", module = "gcad")]
struct PySynthSpec(gcad::SynthSpec);

#[pymethods]
impl PySynthSpec {
    /// The five-channel VAR(2) benchmark with three labelled anomalies.
    #[staticmethod]
    fn default_benchmark() -> Self {
        PySynthSpec(gcad::SynthSpec::default_benchmark())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(PySynthSpec)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Returns `(train, test, adjacency)`.
    fn generate(&self) -> PyResult<(PyDataset, PyDataset, Vec<Vec<bool>>)> {
        let out = self.0.generate().map_err(err)?;
        Ok((PyDataset(out.train), PyDataset(out.test), out.adjacency))
    }
}

fn to_json_value(v: &Bound<'_, PyAny>) -> PyResult<Value> {
    if v.is_none() {
        Ok(Value::Null)
    } else if let Ok(b) = v.extract::<bool>() {
        Ok(Value::Bool(b))
    } else if let Ok(i) = v.extract::<u64>() {
        Ok(i.into())
    } else if let Ok(f) = v.extract::<f64>() {
        serde_json::Number::from_f64(f)
            .map(Value::Number)
            .ok_or_else(|| PyValueError::new_err(format!("{} is not a finite number", f)))
    } else if let Ok(s) = v.extract::<String>() {
        Ok(Value::String(s))
    } else {
        Err(PyValueError::new_err(format!("unsupported value {}", v)))
    }
}

#[pyclass(name = "DetectorConfig", module = "gcad", from_py_object)]
#[derive(Clone)]
struct PyConfig(DetectorConfig);

#[pymethods]
impl PyConfig {
    /// Defaults overridden by keyword, e.g. `DetectorConfig(max_lag=6, beta=1.0)`.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(DetectorConfig::default())
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let fields = value.as_object_mut().expect("config serializes to an object");
        if let Some(kwargs) = kwargs {
            for (k, v) in kwargs.iter() {
                let key: String = k.extract()?;
                if !fields.contains_key(&key) {
                    return Err(PyValueError::new_err(format!("unknown field '{}'", key)));
                }
                fields.insert(key, to_json_value(&v)?);
            }
        }
        let config: DetectorConfig =
            serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        config.validate().map_err(err)?;
        Ok(PyConfig(config))
    }

    #[staticmethod]
    fn synthetic_benchmark() -> Self {
        PyConfig(DetectorConfig::synthetic_benchmark())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let config: DetectorConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        config.validate().map_err(err)?;
        Ok(PyConfig(config))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("DetectorConfig({:?})", self.0)
    }
}

#[pyclass(name = "MixerModel", module = "gcad")]
struct PyModel(gcad::MixerModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        gcad::MixerModel::load(path).map(PyModel).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.0.n_channels()
    }

    #[getter]
    fn max_lag(&self) -> usize {
        self.0.max_lag()
    }

    /// Predicts the next step from an `N × τ` window (rows are channels).
    fn predict(&self, window: Rows) -> PyResult<Vec<f64>> {
        let x = Tensor::from_rows(&window).map_err(err)?;
        self.0.forward(&x).map(Tensor::into_data).map_err(err)
    }

    /// Causality matrix `A[i][j]` of one window and its observed target.
    fn causality(&self, window: Rows, target: Vec<f64>) -> PyResult<Rows> {
        Ok(self.matrix(window, target)?.values().to_rows())
    }

    /// `max(0, A − Aᵀ)` of `causality`, thresholded at `h`.
    #[pyo3(signature = (window, target, h=0.0))]
    fn causal_graph(&self, window: Rows, target: Vec<f64>, h: f64) -> PyResult<Rows> {
        let a = self.matrix(window, target)?;
        GraphOptions::new(h).graph(&a).map(|g| g.values().to_rows()).map_err(err)
    }
}

impl PyModel {
    fn matrix(&self, window: Rows, target: Vec<f64>) -> PyResult<gcad::CausalityMatrix> {
        let x = Tensor::from_rows(&window).map_err(err)?;
        let g = self.0.input_gradients(&x, &Tensor::vector(target)).map_err(err)?;
        gcad::quantify(&g).map_err(err)
    }
}

#[pyclass(name = "NormalPattern", module = "gcad")]
struct PyPattern(gcad::NormalPattern);

#[pymethods]
impl PyPattern {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        gcad::NormalPattern::load(path).map(PyPattern).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    fn mean(&self) -> Rows {
        self.0.mean().to_rows()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.0.n_samples
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.0.graph.threshold
    }
}

#[pyclass(name = "ScoreSeries", module = "gcad", get_all)]
struct PyScores {
    timestamps: Vec<usize>,
    sc: Vec<f64>,
    st: Vec<f64>,
    s: Vec<f64>,
}

#[pymethods]
impl PyScores {
    fn __len__(&self) -> usize {
        self.s.len()
    }
}

/// Trains the predictor; returns the model and `(epoch, train_mse, val_mse)` rows.
#[pyfunction]
fn fit(
    data: &PyDataset,
    config: &PyConfig,
) -> PyResult<(PyModel, Vec<EpochRow>)> {
    let fitted = pipeline::fit(&data.0, &config.0).map_err(err)?;
    let log = fitted
        .log
        .iter()
        .map(|e| (e.epoch, e.train_mse, e.val_mse))
        .collect();
    Ok((PyModel(fitted.model), log))
}

/// Samples the normal pattern from the training part of `data`.
#[pyfunction]
#[pyo3(signature = (model, data, config, workers=None))]
fn build_pattern(
    model: &PyModel,
    data: &PyDataset,
    config: &PyConfig,
    workers: Option<usize>,
) -> PyResult<PyPattern> {
    let (train, _) = split_train_val(&data.0, config.0.train_fraction).map_err(err)?;
    let windows = pipeline::test_windows(&model.0, &train, config.0.stride).map_err(err)?;
    pipeline::build_pattern(&model.0, &windows, &config.0, workers)
        .map(PyPattern)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (model, pattern, data, config, workers=None))]
fn score(
    model: &PyModel,
    pattern: &PyPattern,
    data: &PyDataset,
    config: &PyConfig,
    workers: Option<usize>,
) -> PyResult<PyScores> {
    let windows = pipeline::test_windows(&model.0, &data.0, config.0.stride).map_err(err)?;
    let s = pipeline::score(&model.0, &pattern.0, &windows, &config.0, workers).map_err(err)?;
    Ok(PyScores {
        timestamps: s.timestamps,
        sc: s.sc,
        st: s.st,
        s: s.s,
    })
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    gcad::auroc(&scores, &labels).map_err(err)
}

#[pyfunction]
fn auprc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    gcad::auprc(&scores, &labels).map_err(err)
}

/// AUROC and AUPRC of `series` against per-step `labels`.
#[pyfunction]
fn evaluate(series: &PyScores, labels: Vec<bool>) -> PyResult<(f64, f64)> {
    let picked: Vec<bool> = series
        .timestamps
        .iter()
        .map(|&t| labels.get(t).copied())
        .collect::<Option<_>>()
        .ok_or_else(|| PyValueError::new_err("a scored timestamp has no label"))?;
    let r = gcad::eval::evaluate(&series.s, &picked).map_err(err)?;
    Ok((r.auroc, r.auprc))
}

#[pymodule(name = "gcad")]
pub fn gcad_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GcadRuntimeError", m.py().get_type::<GcadRuntimeError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySynthSpec>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPattern>()?;
    m.add_class::<PyScores>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(build_pattern, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(auprc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
