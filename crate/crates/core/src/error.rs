// SPDX-License-Identifier: Apache-2.0
use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("grid cannot resolve {0}")]
    Resolution(String),
    #[error("budget exceeded: {what} needs {needed}, limit {limit}")]
    Budget {
        what: String,
        needed: u128,
        limit: u128,
    },
    #[error("input has frequency content outside the covered band: {modes:?}")]
    Coverage { modes: Vec<Vec<f64>> },
    #[error("tail bound failed: residual {tail:e} exceeds {bound:e}")]
    TailBound { tail: f64, bound: f64 },
    #[error("symbol has no declared support")]
    SupportDeclaration,
    #[error("fit needs at least 3 points with positive coordinates: {0}")]
    Fit(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}
