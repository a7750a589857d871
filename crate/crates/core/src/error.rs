use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("client count k = {k} outside [1, {n}]")]
    KOutOfRange { k: f64, n: usize },

    #[error("local iteration count e = {0} must be >= 1")]
    EOutOfRange(f64),

    #[error("absolute bound constants A0/B0 are unidentified (only the ratio is known)")]
    Unidentified,

    #[error("loss threshold {which} = {threshold} not reached within {max_rounds} rounds by the probe K = {k}, E = {e}")]
    UnreachableLoss {
        which: &'static str,
        k: usize,
        e: usize,
        threshold: f64,
        max_rounds: usize,
    },

    #[error("inconsistent samples: every pair equation was discarded")]
    InconsistentSamples,

    #[error("run did not reach its target loss")]
    IncompleteRun,

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
