use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid Lebesgue exponent {0}: must be >= 1 or infinite")]
    InvalidExponent(f64),
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("rank mismatch: {0}")]
    RankMismatch(String),
    #[error("dyadic index {index} outside [{min}, {max}]")]
    IndexOutOfRange { index: i32, min: i32, max: i32 },
    #[error("degenerate norm: {0}")]
    Degenerate(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("time step {dt} exceeds the stability bound; use dt <= {suggested}")]
    Cfl { dt: f64, suggested: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
    #[error("budget predicate failed: {0}")]
    Budget(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
