//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An index (token id, row, target) is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A caller-side precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A text input line could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// The corpus as a whole is unusable (e.g. empty).
    #[error("corpus error: {0}")]
    Corpus(String),

    /// A count argument exceeds what the data provides.
    #[error("range error: {0}")]
    Range(String),

    /// Checkpoint file does not start with the expected magic bytes.
    #[error("checkpoint magic mismatch")]
    BadMagic,

    /// Checkpoint was written by an unsupported format version.
    #[error("checkpoint version {found:?} unsupported (expected {expected})")]
    Version { found: String, expected: u32 },

    /// Checkpoint ends before the named array is complete.
    #[error("checkpoint truncated while reading array {array:?}")]
    Truncated { array: String },

    /// Checkpoint is structurally invalid in some other way.
    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    /// Two artifacts (checkpoint, test set, frequency table) disagree.
    #[error("incompatible artifacts: {0}")]
    Compatibility(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
