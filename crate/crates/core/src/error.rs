use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the recognition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {message}")]
    LabelParse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("audio decode error on {path}: {message}")]
    AudioDecode { path: PathBuf, message: String },

    #[error("empty audio buffer")]
    EmptyAudio,

    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },

    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    Shape {
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("harmonic number must be >= 1, got {0}")]
    HarmonicNumber(usize),

    #[error("HSF order must be in 1..=5, got {0}")]
    HsfOrder(usize),

    #[error("variant {variant} requires {component}")]
    MissingComponent {
        variant: String,
        component: &'static str,
    },

    #[error("unknown variant {given:?}; valid variants: {valid}")]
    UnknownVariant { given: String, valid: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed container {path}: {message}")]
    Container { path: PathBuf, message: String },

    #[error(
        "checkpoint geometry hash {checkpoint} does not match the current pipeline ({current}); \
         the checkpoint was trained on differently computed features"
    )]
    GeometryMismatch { checkpoint: String, current: String },

    #[error("training diverged: non-finite loss {loss} at epoch {epoch}, batch {batch} (lr {lr})")]
    Diverged {
        loss: f64,
        epoch: usize,
        batch: usize,
        lr: f64,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(what: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
