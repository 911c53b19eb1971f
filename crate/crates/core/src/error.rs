use thiserror::Error;

use crate::mixture::ModelName;

/// Errors raised by fitting, reduction, selection and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate component {component}: {reason}")]
    DegenerateComponent { component: usize, reason: String },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error(
        "marginal covariance is near-singular (condition number {0:.3e}); \
         remove collinear or constant variables"
    )]
    NearSingular(f64),

    #[error("model {model} is not available for {p} variable(s)")]
    UnsupportedModel { model: ModelName, p: usize },

    #[error("all {0} candidate fits failed")]
    AllFitsFailed(usize),

    #[error("responsibility row {row} sums to {sum}, expected 1")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("partitions have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("{0} classes exceeds the exact matching limit of 10")]
    TooManyClasses(usize),

    #[error("column {0} has zero variance")]
    ZeroVariance(usize),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("archive format error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("archive schema version {found} is newer than supported version {supported}")]
    SchemaVersion { found: u32, supported: u32 },
}

impl Error {
    /// True for failures caused by files or their contents rather than numerics.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Parse { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::SchemaVersion { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
