use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("wav format error in {path}: {field}")]
    WavFormat { path: PathBuf, field: String },

    #[error("wav parse error in {path}: {reason}")]
    WavParse { path: PathBuf, reason: String },

    #[error("clip too short: {len} samples, need at least {min}")]
    ClipTooShort { len: usize, min: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("incomplete checkpoint: missing tensor `{0}`")]
    IncompleteCheckpoint(String),

    #[error("dataset layout error: {0}")]
    DatasetLayout(String),

    #[error("split conflict: `{0}` is listed in both validation and test lists")]
    SplitConflict(String),

    #[error("no background file is long enough to cut a silence sample of {0} samples")]
    SilenceUnavailable(usize),

    #[error("SNR is undefined for a zero-power clip")]
    UndefinedSnr,

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("optimizer state does not match parameters: {0}")]
    StateCorruption(String),

    #[error("training diverged: non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
