use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid range: lo ({lo}) must be strictly below hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("batch norm in train mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("reduction {reduction} leaves no bottleneck width for {channels} channels")]
    ReductionTooLarge { channels: usize, reduction: usize },

    #[error("reduction {reduction} is invalid for {variant}: {reason}")]
    InvalidReduction {
        variant: &'static str,
        reduction: usize,
        reason: &'static str,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("corrupt dataset {path}: {reason}")]
    CorruptDataset { path: PathBuf, reason: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid_shape(shape: &[usize], reason: impl Into<String>) -> Self {
        Error::InvalidShape {
            shape: shape.to_vec(),
            reason: reason.into(),
        }
    }

    /// True for the data-loading failures the CLI maps to its dataset exit code.
    pub fn is_dataset_error(&self) -> bool {
        matches!(
            self,
            Error::CorruptDataset { .. } | Error::MissingFile(_) | Error::Io(_)
        )
    }
}
