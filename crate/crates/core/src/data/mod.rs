//! Datasets, CSV ingestion, normalization and sliding windows.

mod synth;

pub use synth::{Anomaly, AnomalyKind, Nonlinearity, SynthOutput, SynthSpec};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GcadError, Result};
use crate::tensor::Tensor;

pub const LABEL_COLUMN: &str = "label";

/// A `T × N` block of observations with optional point labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Tensor,
    labels: Option<Vec<bool>>,
    channel_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        values: Tensor,
        labels: Option<Vec<bool>>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        let (t, n) = match values.shape() {
            [t, n] => (*t, *n),
            other => {
                return Err(GcadError::Shape(format!(
                    "dataset values must be T x N, got {:?}",
                    other
                )))
            }
        };
        if channel_names.len() != n {
            return Err(GcadError::Shape(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                n
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != t {
                return Err(GcadError::Shape(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    t
                )));
            }
        }
        if let Some(pos) = values.data().iter().position(|v| !v.is_finite()) {
            return Err(GcadError::Data(format!(
                "non-finite value at row {}, column {}",
                pos / n.max(1),
                pos % n.max(1)
            )));
        }
        Ok(Dataset {
            values,
            labels,
            channel_names,
        })
    }

    /// Builds a dataset with generated channel names `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<bool>>) -> Result<Self> {
        let values = Tensor::from_rows(rows)?;
        let n = values.cols();
        Dataset::new(values, labels, default_names(n))
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.n_channels();
        &self.values.data()[t * n..(t + 1) * n]
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let n = self.n_channels();
        let data = self.values.data()[start * n..end * n].to_vec();
        Dataset {
            values: Tensor::new(vec![end - start, n], data).expect("slice within bounds"),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
            channel_names: self.channel_names.clone(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.channel_names.iter().map(String::as_str).collect();
        if self.labels.is_some() {
            header.push(LABEL_COLUMN);
        }
        writer.write_record(&header)?;
        for t in 0..self.len() {
            // Display for f64 prints the shortest string that parses back
            // to the identical bits.
            let mut record: Vec<String> = self.row(t).iter().map(|v| v.to_string()).collect();
            if let Some(labels) = &self.labels {
                record.push(if labels[t] { "1" } else { "0" }.to_string());
            }
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|e| GcadError::io(path, e))?;
        Ok(())
    }
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{}", i)).collect()
}

/// Loads a headed CSV file. When `label_column` is given that column
/// must exist and hold 0/1 flags; every other column is a channel.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| GcadError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();

    let label_idx = match label_column {
        Some(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| {
            GcadError::Config(format!(
                "label column '{}' not found in {}",
                name,
                path.display()
            ))
        })?),
        None => None,
    };
    let channel_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let n = channel_names.len();
    if n == 0 {
        return Err(GcadError::Data(format!("{} has no channel columns", path.display())));
    }

    let mut data = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(GcadError::Data(format!(
                "row {} has {} fields, header has {}",
                row,
                record.len(),
                header.len()
            )));
        }
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if Some(col) == label_idx {
                let flag = match cell {
                    "0" | "0.0" => false,
                    "1" | "1.0" => true,
                    _ => {
                        return Err(GcadError::Data(format!(
                            "row {}, column '{}': label '{}' is not 0 or 1",
                            row, header[col], cell
                        )))
                    }
                };
                labels.as_mut().expect("label vec present").push(flag);
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| {
                GcadError::Data(format!(
                    "row {}, column '{}': cannot parse '{}' as a number",
                    row, header[col], cell
                ))
            })?;
            if !value.is_finite() {
                return Err(GcadError::Data(format!(
                    "row {}, column '{}': non-finite value '{}'",
                    row, header[col], cell
                )));
            }
            data.push(value);
        }
    }
    let t = data.len() / n;
    Dataset::new(Tensor::new(vec![t, n], data)?, labels, channel_names)
}

/// Loads a CSV, treating a final column named `label` as point labels.
pub fn load_csv_auto(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| GcadError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let has_label = reader
        .headers()?
        .iter()
        .next_back()
        .is_some_and(|h| h.trim() == LABEL_COLUMN);
    load_csv(path, has_label.then_some(LABEL_COLUMN))
}

/// Per-channel min/max taken from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub const CLIP_LOW: f64 = -1.0;
pub const CLIP_HIGH: f64 = 2.0;

impl MinMaxStats {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(GcadError::Data("cannot normalize an empty training set".into()));
        }
        let n = train.n_channels();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for t in 0..train.len() {
            for (c, &v) in train.row(t).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(MinMaxStats { min, max })
    }

    /// Maps each channel onto the training range. Constant channels go
    /// to zero; everything is clipped to `[CLIP_LOW, CLIP_HIGH]`.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        let n = d.n_channels();
        if n != self.min.len() {
            return Err(GcadError::Shape(format!(
                "normalization fitted on {} channels, dataset has {}",
                self.min.len(),
                n
            )));
        }
        let mut data = d.values().data().to_vec();
        for (idx, v) in data.iter_mut().enumerate() {
            let c = idx % n;
            let range = self.max[c] - self.min[c];
            *v = if range > 0.0 {
                ((*v - self.min[c]) / range).clamp(CLIP_LOW, CLIP_HIGH)
            } else {
                0.0
            };
        }
        Dataset::new(
            Tensor::new(d.values().shape().to_vec(), data)?,
            d.labels.clone(),
            d.channel_names.clone(),
        )
    }
}

/// Fits min/max on `train` and applies it to `train` and every entry of
/// `others`.
pub fn minmax_normalize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, MinMaxStats)> {
    let stats = MinMaxStats::fit(train)?;
    let train_norm = stats.apply(train)?;
    let others = others
        .iter()
        .map(|d| stats.apply(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((train_norm, others, stats))
}

/// Contiguous prefix/suffix split; the prefix holds `floor(fraction · T)` rows.
pub fn split_train_val(normal: &Dataset, fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(GcadError::Config(format!(
            "train fraction must be in (0, 1), got {}",
            fraction
        )));
    }
    let cut = (fraction * normal.len() as f64).floor() as usize;
    Ok((normal.slice(0, cut), normal.slice(cut, normal.len())))
}

/// One predictor sample: the `N × τ` history and the value that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Row `i` holds channel `i` over `x_{t-τ} … x_{t-1}`, oldest first.
    pub x: Tensor,
    pub y: Tensor,
    /// Index of `y` in the source dataset.
    pub target: usize,
}

#[derive(Debug, Clone)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub stride: usize,
    pub max_lag: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.target).collect()
    }
}

/// Slides a window of length `max_lag` over `d`. Targets run from
/// `max_lag` in steps of `stride` while they stay inside the series, so
/// there are `ceil((T - max_lag) / stride)` windows.
pub fn make_windows(d: &Dataset, max_lag: usize, stride: usize) -> Result<WindowSet> {
    if max_lag == 0 || stride == 0 {
        return Err(GcadError::Config(format!(
            "window length and stride must be >= 1 (got {} and {})",
            max_lag, stride
        )));
    }
    let t_len = d.len();
    if t_len <= max_lag {
        return Err(GcadError::Data(format!(
            "series of length {} is too short for windows of length {}",
            t_len, max_lag
        )));
    }
    let n = d.n_channels();
    let count = (t_len - max_lag).div_ceil(stride);
    let mut windows = Vec::with_capacity(count);
    for k in 0..count {
        let target = max_lag + k * stride;
        let mut x = Vec::with_capacity(n * max_lag);
        for c in 0..n {
            for lag in 0..max_lag {
                x.push(d.row(target - max_lag + lag)[c]);
            }
        }
        windows.push(Window {
            x: Tensor::new(vec![n, max_lag], x)?,
            y: Tensor::vector(d.row(target).to_vec()),
            target,
        });
    }
    Ok(WindowSet {
        windows,
        stride,
        max_lag,
    })
}
