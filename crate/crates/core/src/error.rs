use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: image_feature has length {found}, header declares fc={expected}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },

    #[error("duplicate event id {0:?}")]
    DuplicateId(String),

    #[error("degenerate popularity range: all raw scores equal {0}")]
    DegenerateRange(f64),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("unknown token {0:?}: corpus and graph do not share a vocabulary")]
    UnknownToken(String),

    #[error("vocabulary hash mismatch: checkpoint {checkpoint}, graph {graph}")]
    VocabMismatch { checkpoint: String, graph: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the command line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::DuplicateId(_) => "duplicate-id",
            Error::DegenerateRange(_) => "degenerate-range",
            Error::Config(_) => "config",
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non-finite",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::Tape(_) => "tape",
            Error::UnknownToken(_) => "unknown-token",
            Error::VocabMismatch { .. } => "vocab-mismatch",
            Error::Format(_) => "format",
            Error::Metric(_) => "metric",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
