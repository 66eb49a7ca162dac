use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not unitary (deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("matrix is not hermitian (deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not a density matrix: {0}")]
    NotDensity(String),
    #[error("matrix is not a projector (deviation {0:.3e})")]
    NotProjector(f64),
    #[error("non-finite entry in input")]
    NonFinite,
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    #[error("relation size {size} exceeds truncation t_max = {t_max}")]
    TruncationExceeded { size: usize, t_max: usize },
    #[error("sparse key budget of {0} entries exhausted")]
    KeyBudgetExceeded(usize),
    #[error("query budget of {0} queries exhausted")]
    QueryBudgetExhausted(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("backend error: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, Error>;
