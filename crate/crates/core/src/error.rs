use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants mirror the failure classes of the public API: structural shape
/// errors, invalid arguments, configuration rejection, data/parse problems,
/// persistence format problems, and numerical training failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or parameter shapes are incompatible for an operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument is outside the operation's domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration document failed validation.
    #[error("configuration error: {0}")]
    Config(String),

    /// A gradient contained NaN/Inf; the step is refused.
    #[error("training error: non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    /// Numerical failure during training (non-finite loss).
    #[error("training error: {0}")]
    Training(String),

    /// A text value could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Records violate the dataset schema (e.g. inconsistent channel count).
    #[error("schema error: {0}")]
    Schema(String),

    /// A binary file failed structural validation (magic, version, width).
    #[error("format error: {0}")]
    Format(String),

    /// A file ended before the declared payload was read.
    #[error("length error: {0}")]
    Length(String),

    /// Stored tensor data contradicts the stored configuration.
    #[error("corruption error: tensor `{tensor}`: {message}")]
    Corruption { tensor: String, message: String },

    /// A stratified split cannot be formed.
    #[error("split error: class {class} has {count} record(s); at least 2 are required")]
    Split { class: String, count: usize },

    /// A metric is undefined on the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Batching over ragged records.
    #[error("batching error: {0}")]
    Batching(String),

    /// An invariant that callers cannot violate was broken.
    #[error("internal error: {0}")]
    Internal(String),

    /// I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
