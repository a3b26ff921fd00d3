use thiserror::Error;

/// Errors raised by the transport solvers and their inputs.
#[derive(Debug, Error)]
pub enum OtError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("negative entry in {what} at index {index}")]
    NegativeEntry { what: &'static str, index: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unequal sample sizes ({source_rows} vs {target_rows}); map estimation needs equal sizes, use a plan-based method")]
    UnequalSizes {
        source_rows: usize,
        target_rows: usize,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("infeasible kernel: {0}")]
    InfeasibleKernel(String),

    #[error("oracle disagreement: {0}")]
    OracleMismatch(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = OtError> = std::result::Result<T, E>;
