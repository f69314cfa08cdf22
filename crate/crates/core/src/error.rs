use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// A primitive received operands whose shapes it cannot combine.
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient correspondences: need {required}, have {available}")]
    InsufficientCorrespondences { required: usize, available: usize },
    #[error("point maps to infinity under homography (|w| = {w:e})")]
    PointAtInfinity { w: f64 },
    /// Geometric estimation could not find a usable model.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("cheirality ambiguity: no pose candidate wins strictly ({0})")]
    CheiralityAmbiguity(String),
    /// A loss term evaluated to NaN or infinity.
    #[error("non-finite loss in term {term}")]
    NonFiniteLoss { term: &'static str },
    #[error("parse error in {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
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
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
