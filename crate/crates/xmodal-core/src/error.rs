//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: configuration
//! problems, data/validation problems, and runtime aborts.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // -- configuration -------------------------------------------------------
    #[error("config error: {0}")]
    Config(String),

    #[error("config parse error at {path}:{line}: {msg}")]
    ConfigParse { path: PathBuf, line: usize, msg: String },

    // -- data & validation ---------------------------------------------------
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest parse error at line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },

    #[error("validation error in field `{field}`: {msg}")]
    Validation { field: String, msg: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("audio too short: {got} samples, need at least {need}")]
    AudioTooShort { got: usize, need: usize },

    #[error("file format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    #[error("checkpoint version mismatch: file has v{found}, expected v{expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("preset mismatch: checkpoint was written with `{found}`, run configured for `{expected}`")]
    PresetMismatch { found: String, expected: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("undefined AUC for `{context}`: {msg}")]
    UndefinedAuc { context: String, msg: String },

    // -- contract breaches ---------------------------------------------------
    #[error("contract error: {0}")]
    Contract(String),

    // -- runtime -------------------------------------------------------------
    #[error("non-finite loss at epoch {epoch}, step {step} (batch samples: {batch_ids:?})")]
    NanAbort {
        epoch: usize,
        step: usize,
        batch_ids: Vec<String>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation { field: field.into(), msg: msg.into() }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    pub fn corrupt(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Corrupt { path: path.into(), msg: msg.into() }
    }

    /// Exit-code class used by the CLI: 1 config, 2 data, 3 runtime.
    pub fn exit_class(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigParse { .. } => 1,
            Error::NanAbort { .. } => 3,
            _ => 2,
        }
    }
}
