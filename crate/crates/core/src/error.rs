use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the denoising pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("line {line}: timestamp {t_us} precedes previous timestamp {prev_us}")]
    Ordering { line: u64, t_us: u64, prev_us: u64 },

    #[error("event at ({x}, {y}) outside {width}x{height} sensor")]
    Bounds {
        x: u32,
        y: u32,
        width: u16,
        height: u16,
    },

    #[error("invalid sensor geometry {width}x{height}: both sides must be at least 8")]
    Geometry { width: u16, height: u16 },

    #[error("age window must be a power of two between 1 and 256 ms, got {0}")]
    AgeWindow(u32),

    #[error("weight file: {0}")]
    WeightFile(String),

    #[error("weight layout mismatch: expected `{expected}`, found `{found}`")]
    Layout { expected: String, found: String },

    #[error("evaluation needs both classes (signal={signal}, noise={noise})")]
    SingleClass { signal: usize, noise: usize },

    #[error("event at line {0} carries no signal/noise label")]
    MissingLabel(usize),

    #[error("training: {0}")]
    Training(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
