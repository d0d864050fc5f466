use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset: cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset: csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset: {0}")]
    Schema(String),
    #[error("dataset: value {value} lies outside every bin")]
    OutOfBins { value: f64 },
    #[error("dataset: component {index} = {value} is out of range (domain size {size})")]
    OutOfRange { index: usize, value: usize, size: usize },
    #[error("rr: invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("rr: invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("rr: matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },
    #[error("rr: dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("rr: empty response vector")]
    EmptyResponses,
    #[error("rr: distribution has no positive mass to rescale")]
    NoPositiveMass,
    #[error("rr: invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("error_model: {0}")]
    InvalidBoundInput(String),
    #[error("dependence: length mismatch ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("dependence: degenerate contingency table: {0}")]
    DegenerateTable(String),
    #[error("clustering: {0}")]
    Clustering(String),
    #[error("mpc: {0}")]
    Protocol(String),
    #[error("adjustment: irreconcilable support for unit {unit}: no record carries a category with positive target mass")]
    IrreconcilableSupport { unit: usize },
    #[error("adjustment: {0}")]
    Adjustment(String),
    #[error("pipeline: joint domain size {size} exceeds cap {cap}")]
    JointTooLarge { size: u128, cap: u128 },
    #[error("pipeline: {0}")]
    Config(String),
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
