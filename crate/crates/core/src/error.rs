use std::path::PathBuf;

use pona_tensor::TensorError;

pub type Result<T, E = PonaError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum PonaError {
    #[error("joint {index} ({name}) at ({x}, {y}) lies outside the {width}x{height} image")]
    JointOutOfBounds {
        index: usize,
        name: &'static str,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("expected {expected} joints, found {found}")]
    JointCount { expected: usize, found: usize },
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: &'static str, step: u64 },
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: missing image {image}")]
    MissingImage {
        path: PathBuf,
        line: usize,
        image: PathBuf,
    },
    #[error("degenerate head segment: {0}")]
    DegenerateHead(String),
    #[error("invalid metric input: {0}")]
    Metric(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("at step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<PonaError>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl PonaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, left: &[usize], right: &[usize]) -> Self {
        Self::ShapeMismatch {
            context,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
