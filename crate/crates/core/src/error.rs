use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("basis is not orthonormal (deviation {0:.3e})")]
    NonOrthonormalBasis(f64),
    #[error("operator is zero; {0} is undefined")]
    ZeroOperator(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("alpha is not a subgradient: {0}")]
    NotSubgradient(String),
    #[error("restricted injectivity violated: {0}")]
    InjectivityViolated(String),
    #[error("norm is not separable: {0}")]
    NotSeparable(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("no stability guarantee: {0}")]
    NoStabilityGuarantee(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
