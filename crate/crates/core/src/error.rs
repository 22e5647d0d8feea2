use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the hyper-process model pipeline.
#[derive(Debug, Error)]
pub enum HpmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: &'static str,
    },

    #[error("descriptor dimension {index} ({name}) is constant across the set; cannot normalize")]
    DegenerateDimension { index: usize, name: String },

    #[error(
        "underdetermined fit: {rows} samples for {features} features (need at least {features})"
    )]
    Underdetermined { rows: usize, features: usize },

    #[error("rank-deficient design matrix: rank {rank} < {features} features")]
    RankDeficient { rank: usize, features: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("incompatible shapes: {0}")]
    IncompatibleShapes(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no samples")]
    NoSamples,

    #[error("pipeline step {line} ({stage}): {source}")]
    Stage {
        line: u8,
        stage: &'static str,
        #[source]
        source: Box<HpmError>,
    },

    #[error("unknown process id {0}")]
    UnknownProcess(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HpmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HpmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_line(self, line: u8, stage: &'static str) -> Self {
        HpmError::Stage {
            line,
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, HpmError>;
