use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("window mismatch: {0}")]
    WindowMismatch(String),

    #[error("degenerate retrieval: {0}")]
    DegenerateRetrieval(String),

    #[error("solver diverged at step {step} (t = {time}): {detail}")]
    Diverged {
        step: usize,
        time: f64,
        detail: String,
    },

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFiniteMatrix { row: usize, col: usize },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
