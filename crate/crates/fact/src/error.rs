//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors disagree on a dimension the operation needs to match.
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Mode-n product requested for a mode a 3-d tensor does not have.
    #[error("mode-{mode} product is undefined for a 3-d tensor (valid modes: 1, 2, 3)")]
    InvalidMode { mode: usize },

    /// `backward` was called on something that is not a scalar.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("slice index {index} out of range for {len} slices")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic bytes, not a FACT container")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported container version {found}")]
    BadVersion { path: PathBuf, found: u16 },

    #[error("{path}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CrcMismatch {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("{path}: truncated container, expected {expected} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("data format error: {0}")]
    DataFormat(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f32 },
}

impl Error {
    /// Process exit code used by the CLI: 2 for configuration/shape problems,
    /// 3 for data and file problems, 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ShapeMismatch { .. }
            | Error::InvalidMode { .. }
            | Error::NonScalarLoss { .. }
            | Error::Config(_)
            | Error::IndexOutOfRange { .. } => 2,
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::BadVersion { .. }
            | Error::CrcMismatch { .. }
            | Error::Truncated { .. }
            | Error::DataFormat(_) => 3,
            Error::Diverged { .. } => 4,
        }
    }

    /// Machine-parseable category tag printed by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            3 => "data",
            _ => "divergence",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
