use alloc::boxed::Box;
use alloc::string::String;

/// Errors produced by the alignment algorithms.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("score undefined: {0}")]
    Undefined(&'static str),
    #[error("insufficient subspace support: {side} has {found} qualifying features, need at least {required}")]
    InsufficientSupport {
        side: &'static str,
        found: usize,
        required: usize,
    },
    #[error("null run {run} failed: {source}")]
    NullRun {
        run: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
