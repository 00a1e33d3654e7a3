//! Error classes shared across the crate.

use thiserror::Error;

/// One variant per failure class; the CLI maps these onto exit codes and
/// machine-parseable prefixes.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape mismatch; names both shapes.
    #[error("dimension mismatch: {context}: {lhs:?} vs {rhs:?}")]
    Dimension {
        context: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// Malformed runtime input (duplicate items, out-of-range ids, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid model or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A file failed structural validation (bad magic, version, schema).
    #[error("format error: {0}")]
    Format(String),

    /// Work refused because it exceeds a configured limit.
    #[error("resource error: {0}")]
    Resource(String),

    /// Non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Cross-structure consistency violation (cache vs index matrix, ...).
    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable one-word class tag, used in CLI error lines.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Input(_) => "input",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Resource(_) => "resource",
            Error::Numeric(_) => "numeric",
            Error::Internal(_) => "internal",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
