use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate bandwidth: all points are identical")]
    DegenerateBandwidth,

    #[error("no density: {0}")]
    NoDensity(String),

    #[error("internal consistency error: {0}")]
    Inconsistent(String),

    #[error("MAPE undefined: base value at index {0} is zero")]
    MapeUndefined(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}
