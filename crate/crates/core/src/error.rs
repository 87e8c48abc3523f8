use std::path::PathBuf;

use thiserror::Error;

use crate::solver::SolverReport;

/// Errors produced by the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state of charge left [-0.001, 1.001] at sample {index}: z = {value}")]
    SocOutOfRange { index: usize, value: f64 },

    #[error("non-positive time constant {tau1} at z = {z}")]
    NonpositiveTimeConstant { z: f64, tau1: f64 },

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("z = {z} outside the knot span [{lo}, {hi}]{}", index.map(|i| format!(" (sample {i})")).unwrap_or_default())]
    OutOfDomain {
        z: f64,
        lo: f64,
        hi: f64,
        index: Option<usize>,
    },

    #[error("invalid derivative order {order} (maximum {max})")]
    InvalidOrder { order: usize, max: usize },

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("solver did not converge after {} iterations", .0.iterations)]
    NotConverged(Box<SolverReport>),

    #[error("normal matrix is numerically singular")]
    RankDeficient,

    #[error("window of {window} samples exceeds data length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("variance of the estimate is degenerate ({0:e})")]
    DegenerateVariance(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

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

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors caused by malformed input or configuration rather
    /// than by a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::InvalidRange(_)
                | Error::Schema { .. }
                | Error::Io { .. }
                | Error::Csv { .. }
                | Error::Json { .. }
                | Error::LengthMismatch { .. }
                | Error::WindowTooLong { .. }
                | Error::InsufficientData { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
