use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value fell outside the interval a hardware mapping can represent.
    #[error("value {value:e} out of range [{min:e}, {max:e}]{}", .context.as_deref().map(|c| format!(" at {c}")).unwrap_or_default())]
    Range {
        value: f64,
        min: f64,
        max: f64,
        context: Option<String>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("extraction failed: {0}")]
    Extraction(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn range(value: f64, min: f64, max: f64) -> Self {
        Error::Range {
            value,
            min,
            max,
            context: None,
        }
    }

    /// Attach a location (layer/row/col, file, ...) to a range error.
    pub fn at(self, location: impl Into<String>) -> Self {
        match self {
            Error::Range {
                value,
                min,
                max,
                context,
            } => {
                let location = location.into();
                let context = match context {
                    Some(inner) => format!("{location}, {inner}"),
                    None => location,
                };
                Error::Range {
                    value,
                    min,
                    max,
                    context: Some(context),
                }
            }
            other => other,
        }
    }

    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Training { .. })
    }
}
