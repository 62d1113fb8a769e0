use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or widths disagree with a network or environment configuration.
    #[error("configuration error: {0}")]
    Shape(String),

    /// A NaN or infinity appeared in a forward or backward pass.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An API was called in a state that does not allow it.
    #[error("usage error: {0}")]
    Usage(String),

    /// No action is available under the given mask.
    #[error("no available action in mask")]
    EmptyMask,

    /// Exhaustive enumeration would exceed the allowed budget.
    #[error("enumeration budget exceeded: {needed} > {budget}")]
    Budget { needed: u128, budget: u128 },

    #[error("config file not found: {0}")]
    MissingFile(PathBuf),

    #[error("unknown config key `{key}` in {path}")]
    UnknownKey { path: PathBuf, key: String },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },

    #[error("malformed CSV {path}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
