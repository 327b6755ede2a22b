use thiserror::Error;

use crate::multiindex::MultiIndex;
use crate::training::TrainReport;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("limit exceeded: {what} is {value}, cap is {cap}")]
    Limit {
        what: &'static str,
        value: usize,
        cap: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("incomplete input: {0}")]
    IncompleteInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value at layer {layer}, index {index}")]
    NonFinite { layer: usize, index: MultiIndex },

    #[error("training diverged at iteration {iteration}: non-finite loss or gradient")]
    Diverged {
        iteration: usize,
        report: Box<TrainReport>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
