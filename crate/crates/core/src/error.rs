use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
///
/// The variants map onto two broad classes used by the command line:
/// configuration/contract problems (the caller handed us something
/// invalid) and runtime/numeric problems (valid input, but the
/// computation could not complete).
#[derive(Debug, Error)]
pub enum GcadError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("window {index}: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<GcadError>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl GcadError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        GcadError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures that happen while computing on valid input
    /// (divergence, empty samples, single-class labels, non-finite values).
    pub fn is_runtime(&self) -> bool {
        match self {
            GcadError::Numeric(_)
            | GcadError::Training { .. }
            | GcadError::Sampling(_)
            | GcadError::Eval(_) => true,
            GcadError::Window { source, .. } => source.is_runtime(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, GcadError>;
