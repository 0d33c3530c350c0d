//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// configuration and argument errors exit 2, data and I/O errors exit 3,
/// numeric errors exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or option combination.
    #[error("config error: {0}")]
    Config(String),

    /// A module precondition was violated by the caller.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Malformed input record.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input data violates a data-level contract (ordering, positivity, coverage).
    #[error("data error: {0}")]
    Data(String),

    /// A numeric routine produced or detected an invalid value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI contract: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Parse { .. } | Error::Data(_) | Error::Io(_) | Error::Json(_)
            | Error::Csv(_) => 3,
            Error::Numeric(_) => 4,
        }
    }

    /// Short machine-parseable code used in single-line CLI error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "E2-CONFIG",
            Error::Argument(_) => "E2-ARGUMENT",
            Error::Parse { .. } => "E3-PARSE",
            Error::Data(_) => "E3-DATA",
            Error::Io(_) => "E3-IO",
            Error::Json(_) => "E3-JSON",
            Error::Csv(_) => "E3-CSV",
            Error::Numeric(_) => "E4-NUMERIC",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
