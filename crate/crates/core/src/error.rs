use thiserror::Error;

/// Failure modes shared by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A window, anchor or lag fell outside the admissible range.
    #[error("range error: {0}")]
    Range(String),
    /// Invalid or mutually inconsistent tuning parameters.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke a documented precondition (shape, symmetry, rank).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Input data cannot support the requested statistic.
    #[error("degenerate data: {0}")]
    Degenerate(String),
    /// Malformed input data (non-finite values, ragged rows, ...).
    #[error("data error: {0}")]
    Data(String),
    /// A numerical self-check failed.
    #[error("numerical consistency error: {0}")]
    Numerical(String),
    #[error("LP solver failed on column {column}: {message}")]
    Solver { column: usize, message: String },
    #[error("calibration error: {0}")]
    Calibration(String),
}

pub type Result<T> = std::result::Result<T, Error>;
