use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The normalizing variance of a statistic collapsed to (numerically) zero.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("convergence failure after {iterations} iterations: {message}")]
    ConvergenceFailure { iterations: usize, message: String },

    #[error("calibration failure: {0}")]
    CalibrationFailure(String),

    #[error("{failures} of {reps} replicates failed for method {method}")]
    ReplicateFailures {
        method: String,
        failures: usize,
        reps: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
