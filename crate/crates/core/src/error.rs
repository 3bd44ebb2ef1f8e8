use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("gradient requested of a non-scalar output with shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("higher-order mode is disabled on this tape; build it with `Tape::with_higher_order()`")]
    HigherOrderDisabled,

    #[error(
        "output does not depend on a recorded gradient; compute the first-order \
         gradient with `Tape::grad_graph` (higher-order mode) before differentiating it again"
    )]
    FirstOrderNotRecorded,

    #[error("only two orders of differentiation are supported")]
    OrderExceeded,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus {0} contains no characters")]
    EmptyCorpus(PathBuf),

    #[error("no corpus line has at least {0} characters")]
    NoWindow(usize),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("teacher-helping prefix must be one-hot")]
    SoftPrefix,

    #[error("empty batch passed to `{0}`")]
    EmptyBatch(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value at iteration {iter}: {what}")]
    NonFinite { iter: u64, what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, not a charwgan checkpoint")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("file is truncated or corrupt: {0}")]
    Corrupt(String),

    #[error("file is corrupt, checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("missing entry `{0}`")]
    Missing(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        Error::Shape { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
    }
}
