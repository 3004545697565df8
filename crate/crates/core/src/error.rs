use thiserror::Error;

/// Errors raised by the numerical and runtime layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trajectory already terminated by a final answer")]
    Terminated,
    #[error("degenerate group: reward spread below threshold")]
    DegenerateGroup,
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(idx) => Err(Error::InvalidInput(format!("{what}[{idx}] is not finite"))),
        None => Ok(()),
    }
}
