use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("divisibility violation in {op}: {detail}")]
    Divisibility { op: &'static str, detail: String },

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter {0} has no gradient")]
    MissingGrad(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("annotation {path}: {detail}")]
    Annotation { path: PathBuf, detail: String },

    #[error("unsupported shape type {shape_type:?} in {path}")]
    UnsupportedShape { path: PathBuf, shape_type: String },

    #[error("unknown label {label:?} in {path}")]
    UnknownLabel { path: PathBuf, label: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn divisibility(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Divisibility {
            op,
            detail: detail.into(),
        }
    }

    /// Process exit code for this error: 1 usage, 2 data, 3 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Divisibility { .. } => 1,
            Error::Verification(_) => 3,
            _ => 2,
        }
    }
}
