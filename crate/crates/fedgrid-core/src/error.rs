//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible vector/matrix shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Input outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),
    /// An iterative solve did not reach its tolerance.
    #[error("failed to converge: {0}")]
    Convergence(String),
    /// An API was called out of order or on exhausted state.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// Malformed file contents.
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Re-wrap with a prefix while keeping the variant, used by the training
    /// loop to attach step/episode indices to failures from sub-operations.
    pub fn with_context(self, ctx: &str) -> Error {
        match self {
            Error::Dimension(m) => Error::Dimension(format!("{ctx}: {m}")),
            Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
            Error::Convergence(m) => Error::Convergence(format!("{ctx}: {m}")),
            Error::Protocol(m) => Error::Protocol(format!("{ctx}: {m}")),
            Error::Parse(m) => Error::Parse(format!("{ctx}: {m}")),
            Error::Io(e) => Error::Io(e),
        }
    }
}
