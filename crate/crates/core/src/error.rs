use std::path::PathBuf;

/// Unified error type for the engine.
///
/// The CLI maps these onto process exit codes, so the variants are grouped by
/// *kind of failure* rather than by module: configuration/usage problems,
/// data/file problems, and numeric problems are kept distinct.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor arguments to an operation do not have compatible shapes.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An operation received or produced a NaN/Inf where finite values are required.
    #[error("non-finite value in {op}: {detail}")]
    NonFinite { op: &'static str, detail: String },

    /// A configuration value is out of range or inconsistent with others.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Autodiff misuse: backward on a non-scalar, replaying a spent tape, or a
    /// loss that does not reach any trainable leaf.
    #[error("autodiff error: {0}")]
    Autodiff(String),

    /// A binary file does not start with the expected magic bytes.
    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: [u8; 4] },

    /// A binary file ended before its declared payload was complete.
    #[error("truncated file {path}: expected {expected} bytes, got {got}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        got: u64,
    },

    /// A file declares a format version this build does not understand.
    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u16 },

    /// A volume file declares a dtype code this build does not understand.
    #[error("unsupported dtype code {dtype} in {path}")]
    UnsupportedDtype { path: PathBuf, dtype: u8 },

    /// Declared dimensions would overflow addressable memory.
    #[error("dimension overflow in {path}: {detail}")]
    DimensionOverflow { path: PathBuf, detail: String },

    /// A checkpoint is structurally valid but does not match the model
    /// (wrong parameter path, shape, or count).
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    /// A dataset manifest is malformed or references missing files.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Dataset-level problems that are not file-format problems
    /// (e.g. a sequence with no annotated frames).
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure during training/evaluation (NaN loss, divergence).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Shorthand for wrapping an `io::Error` with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
