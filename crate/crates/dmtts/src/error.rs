//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants map to the
//! failure classes surfaced at the CLI: configuration and usage errors exit
//! with code 2, runtime failures with code 1.

/// Failure classes for every public operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration value or inconsistent config combination.
    #[error("config: {0}")]
    Config(String),

    /// A resource limit was exceeded (vocab capacity, page pool, sequence length).
    #[error("capacity: {0}")]
    Capacity(String),

    /// Malformed or inconsistent data (corpus lines, token ids, splits).
    #[error("data: {0}")]
    Data(String),

    /// A metric was requested on input for which it is undefined.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Non-finite value or numerically invalid input.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Checkpoint serialization or validation failure.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Serving-path failure (session admission, decode, bench).
    #[error("serve: {0}")]
    Serve(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code for this error: 2 for usage/config errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}
