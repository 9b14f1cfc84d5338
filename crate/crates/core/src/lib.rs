//! Multivariate time-series anomaly detection through dynamic Granger
//! causality.
//!
//! A time/feature-mixing MLP is trained to predict the next observation
//! from a window of `τ` past steps. At test time each channel's squared
//! prediction error is back-propagated to the input window; the lag-mean
//! of the absolute gradients gives a causality matrix `A`, which is
//! antisymmetrized and thresholded into a sparse graph. Windows are scored
//! by their relative deviation from the mean graph of sampled normal
//! windows.

pub mod causality;
pub mod data;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod predictor;
pub mod scoring;
pub mod tensor;

pub use causality::{quantify, sparsify, CausalityMatrix, GraphOptions, SparseCausalGraph};
pub use data::{Dataset, SynthSpec, Window, WindowSet};
pub use error::{GcadError, Result};
pub use eval::{auprc, auroc, EvalReport};
pub use predictor::{channel_loss, GradientTensor, MixerConfig, MixerModel};
pub use scoring::{NormalPattern, ScoreSeries};
pub use tensor::{Tape, Tensor};
