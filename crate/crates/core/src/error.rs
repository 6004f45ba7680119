use std::io;

use thiserror::Error;

/// Errors raised across the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("operation produced an empty result: {0}")]
    EmptyResult(String),
    #[error("range holds {available} states but a window needs {needed}")]
    RangeTooShort { available: usize, needed: usize },
    #[error("conditioning block required by a conditional model")]
    CondMissing,
    #[error("conditioning block supplied to an unconditional model")]
    CondUnexpected,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("k = {k} exceeds cloud size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("sizes differ: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },
    #[error("ensemble of size {0} cannot define a spread (need at least 2 members)")]
    DegenerateEnsemble(usize),
    #[error("zero variance in {0}")]
    ZeroVariance(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("histogram source '{0}' is empty")]
    EmptySource(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("{runs} runs cannot be split into groups of {group_size}")]
    GroupSizeMismatch { runs: usize, group_size: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite(context.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics rather than of inputs or IO.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::RankDeficient
                | Error::ZeroVariance(_)
                | Error::DegenerateEnsemble(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
