use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
///
/// The variants map onto the CLI exit-code contract: `Check` → 1,
/// `Config`/`Spec` → 2, everything else → 3.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid experiment spec at `{field}`: {message}")]
    Spec { field: String, message: String },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("non-finite state: {0}")]
    NonFinite(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn config(msg: impl Into<String>) -> Self {
        LabError::Config(msg.into())
    }

    pub fn spec(field: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Spec {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error under the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Check(_) => 1,
            LabError::Config(_) | LabError::Spec { .. } | LabError::Json(_) => 2,
            _ => 3,
        }
    }
}
