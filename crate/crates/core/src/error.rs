use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("failed to load weights from {path}: {reason}")]
    WeightsLoad { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data validation failed for sample {sample}: {reason}")]
    DataValidation { sample: String, reason: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("non-finite loss at step {step}; offending batch: [{}]", .batch_ids.join(", "))]
    NonFiniteLoss { step: usize, batch_ids: Vec<String> },

    #[error("frozen encoder parameters changed during training ({before} -> {after})")]
    EncoderMutated { before: String, after: String },

    #[error("gradient-flow check failed; no gradient reaches: {}", .0.join(", "))]
    GradientFlow(Vec<String>),

    #[error("image codec error: {0}")]
    Image(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by what the caller handed in (bad flags, bad
    /// files, missing paths) rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::Config(_)
            | Error::WeightsLoad { .. }
            | Error::DataValidation { .. }
            | Error::DegenerateInput(_)
            | Error::Checkpoint { .. }
            | Error::Json(_)
            | Error::Image(_) => true,
            Error::Io { source, .. } => matches!(
                source.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ),
            Error::NonFiniteLoss { .. } | Error::EncoderMutated { .. } | Error::GradientFlow(_) => false,
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
