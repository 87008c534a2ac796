use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Search phase a failure belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Cell-A exploration; only the memory budget is checked.
    Memory,
    /// Cell-B exploration; all four budgets are checked.
    Hardware,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Memory => f.write_str("memory"),
            Phase::Hardware => f.write_str("hardware constraints"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite weight at index {index}")]
    NonFiniteWeight { index: usize },

    #[error("invalid quantization spec: {0}")]
    InvalidQuant(String),

    #[error("bit_d exceeds bit_w ({bit_d} > {bit_w})")]
    BitDExceedsBitW { bit_d: u32, bit_w: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config key `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("weight word exceeds crossbar width ({cols_per_filter} columns per weight, crossbar has {xbar_size})")]
    WeightWordTooWide { cols_per_filter: u32, xbar_size: u32 },

    #[error("shape mismatch in layer {layer}: {detail}")]
    ShapeMismatch { layer: String, detail: String },

    #[error("no LIF layers recorded")]
    NoLifLayers,

    #[error("no feasible architecture ({phase}): {detail}")]
    NoFeasible { phase: Phase, detail: String },

    #[error("bad magic {found:?} (expected \"NNAS\")")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported batch file version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),

    #[error("batch needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("unsupported batch shape: {0}")]
    BadBatchShape(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoFeasible { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
