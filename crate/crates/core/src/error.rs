use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("signal too short: {len} samples, need at least {required}")]
    SignalTooShort { len: usize, required: usize },

    #[error("silent input")]
    SilentInput,

    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),

    #[error("stft configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("unsupported codec in {path}: {reason}")]
    UnsupportedCodec { path: PathBuf, reason: String },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("channel count mismatch: model expects {expected}, input has {actual}")]
    ChannelCountMismatch { expected: usize, actual: usize },

    #[error("input too small for depth {depth}: layer {layer} collapses to {height}x{width}")]
    InputTooSmall {
        depth: usize,
        layer: usize,
        height: usize,
        width: usize,
    },

    #[error("gradient requested from a non-scalar tensor of shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("degenerate spectrum")]
    DegenerateSpectrum,

    #[error("mvdr weights not finite at bin {0}")]
    SingularBin(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
