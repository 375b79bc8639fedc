use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the attack-synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid OCV curve: {0}")]
    InvalidOcv(String),

    #[error("invalid time series: {0}")]
    InvalidSeries(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("{path}: row {row}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("unknown profile kind `{0}` (expected constant, sin_mix or pulse_train)")]
    UnknownProfileKind(String),

    #[error("invalid attack weights: {0}")]
    InvalidWeights(String),

    #[error("Riccati sweep diverged at t = {t} s")]
    RiccatiBlowUp { t: f64 },

    #[error("t = {t} s lies outside the grid [{start}, {end}]")]
    OutOfGrid { t: f64, start: f64, end: f64 },

    #[error("OCV extraction: {0}")]
    OcvExtraction(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: parameters, files, schemas.
    Config,
    /// Failure while computing on valid input.
    Runtime,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::RiccatiBlowUp { .. } | Error::Numerical(_) | Error::OutOfGrid { .. } => {
                ErrorKind::Runtime
            }
            _ => ErrorKind::Config,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
