use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpcaError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e} exceeds {limit:.0e})")]
    NotSymmetric { asymmetry: f64, limit: f64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl SpcaError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SpcaError::InvalidConfig(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        SpcaError::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

impl From<csv::Error> for SpcaError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => SpcaError::Io(io),
                _ => unreachable!(),
            }
        } else {
            SpcaError::Parse(e.to_string())
        }
    }
}

impl From<serde_json::Error> for SpcaError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            SpcaError::Io(e.into())
        } else {
            SpcaError::Parse(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, SpcaError>;
