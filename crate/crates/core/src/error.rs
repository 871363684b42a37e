use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("clip shorter than one frame ({len} samples < {frame_length})")]
    EmptyGrid { len: usize, frame_length: usize },

    #[error("degenerate frame")]
    DegenerateFrame,

    #[error("zero variance abscissa")]
    ZeroVarianceAbscissa,

    #[error("degenerate labels")]
    DegenerateLabels,

    #[error("insufficient voicing")]
    InsufficientVoicing,

    #[error("nothing to report")]
    NothingToReport,

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure stems from bad user input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Parse { .. }
                | Error::Domain(_)
                | Error::Parameter(_)
                | Error::Schema(_)
                | Error::Format(_)
        )
    }
}
