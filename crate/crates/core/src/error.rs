use thiserror::Error;

use crate::glasso::GlassoSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index ({row}, {col}) out of range for {bound} blocks")]
    IndexOutOfRange { row: usize, col: usize, bound: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("glasso did not reach the duality-gap target within the sweep budget (gap {gap:.3e})")]
    MaxSweepsExceeded { best: Box<GlassoSolution>, gap: f64 },

    #[error("sample size n = {n} is below the required minimum {required}")]
    SampleSizeTooSmall { n: usize, required: usize },

    #[error("invalid sparsity target: {0}")]
    InvalidTarget(String),

    #[error("dimension {dim} exceeds the full-dimension guard {limit}")]
    DimensionGuard { dim: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable variant name, used by the CLI when reporting numerical failures.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::NotPositiveDefinite => "NotPositiveDefinite",
            Error::MaxSweepsExceeded { .. } => "MaxSweepsExceeded",
            Error::SampleSizeTooSmall { .. } => "SampleSizeTooSmall",
            Error::InvalidTarget(_) => "InvalidTarget",
            Error::DimensionGuard { .. } => "DimensionGuard",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }

    /// True for failures of the numerical procedures, as opposed to bad input files or IO.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite
                | Error::MaxSweepsExceeded { .. }
                | Error::SampleSizeTooSmall { .. }
                | Error::InvalidTarget(_)
                | Error::DimensionGuard { .. }
                | Error::NotSymmetric(_)
                | Error::DimensionMismatch(_)
        )
    }
}
