use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid strategy spec: {0}")]
    Spec(String),
    #[error("speaker identity conflict: {0}")]
    Identity(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}, utterance {utterance}: {detail}")]
    Divergence {
        epoch: usize,
        utterance: String,
        detail: String,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
