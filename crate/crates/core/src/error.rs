use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row count mismatch: {0}")]
    RowMismatch(String),

    #[error("non-numeric value {value:?} in {file}, row {row}, column {column:?}")]
    NonNumeric {
        file: String,
        row: usize,
        column: String,
        value: String,
    },

    #[error("need at least {min} rows, got {got}")]
    EmptyInput { min: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("k = {k} is too large for n = {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("outcome has zero variance")]
    DegenerateY,

    #[error("kernel partial correlation denominator vanished: features are nearly a function of the confounders")]
    DegenerateDenominator,

    #[error("too few rows: {0}")]
    TooFewRows(String),

    #[error("argument must be positive, got {0}")]
    NonPositive(f64),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid confounder spec: {0}")]
    InvalidSpec(String),

    #[error("unmatched id {0:?}")]
    UnmatchedId(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}
