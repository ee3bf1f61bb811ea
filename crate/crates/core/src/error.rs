use thiserror::Error;

/// Errors raised by the solver and its verification harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data is unusable (non-finite samples, wrong sizes).
    #[error("data error: {0}")]
    Data(String),
    /// An operation was called outside its documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// Inputs are individually valid but incompatible with each other.
    #[error("usage error: {0}")]
    Usage(String),
    /// A non-finite value appeared while lifting the given midpoint slice.
    #[error("numerical overflow in slice {slice}: {what}")]
    Overflow { slice: usize, what: String },
    /// The optimizer could not make progress.
    #[error("minimization diverged after {iterations} iterations: {reason}")]
    Divergence { iterations: usize, reason: String },
    /// Invalid run configuration.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
