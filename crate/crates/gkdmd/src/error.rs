//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid arguments: dimension mismatches, out-of-range parameters.
    #[error("input error: {0}")]
    Input(String),

    /// Numerical failure: solver non-convergence, non-finite values,
    /// violated positive-semidefiniteness.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A fitted model is internally inconsistent (non-biorthogonal
    /// eigenpairs, eigenvalue mismatch between the two reduced matrices,
    /// excessive imaginary residual on real data).
    #[error("model error: {0}")]
    Model(String),

    /// Metric evaluation failed (e.g. vanishing denominator).
    #[error("metric error: {0}")]
    Metric(String),

    /// Filesystem failure while reading or writing an artifact.
    #[error("i/o error: {context}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// An artifact file exists but its content cannot be decoded
    /// (malformed JSON/CSV, unsupported version, shape mismatch).
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
