//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid architecture or run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A vector or matrix had the wrong dimensions.
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The caller violated an API precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    /// The training loss blew up or became non-finite.
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: u64, loss: f64 },

    /// Malformed input file (bad magic, truncated payload, ...).
    #[error("format error: {0}")]
    Format(String),

    /// A trajectory lookup referenced an iteration with no checkpoint.
    #[error("no checkpoint at iteration {0}")]
    MissingCheckpoint(u64),

    /// Kernel distance is undefined for a zero Gram matrix.
    #[error("degenerate kernel: Gram matrix has zero Frobenius norm")]
    DegenerateKernel,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
