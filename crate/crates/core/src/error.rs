use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PadError>;

#[derive(Debug, Error)]
pub enum PadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient distinct points: need {needed}, found {found}")]
    InsufficientDistinctPoints { needed: usize, found: usize },

    #[error("rank deficient data: requested {requested} components, achieved rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("protocol split: {0}")]
    Protocol(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stale model: {0}")]
    Stale(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PadError>,
    },
}

/// Coarse error classes used by the command-line driver for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
}

impl PadError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PadError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        PadError::Format { path: path.into(), message: message.into() }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ PadError::Stage { .. } => e,
            e => PadError::Stage { stage, source: Box::new(e) },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            PadError::Numerical(_)
            | PadError::RankDeficient { .. }
            | PadError::InsufficientDistinctPoints { .. } => ErrorClass::Numerical,
            PadError::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(PadError::DimensionMismatch { expected, got })
    }
}
