use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("features file: {0}")]
    Features(String),

    #[error("invalid corpus: {0}")]
    Corpus(String),

    #[error("invalid split: {0}")]
    Split(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("degenerate projection ({context}): output norm {norm:e} below 1e-12")]
    DegenerateProjection { context: String, norm: f64 },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("bad {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Numeric failures during training or projection, as opposed to bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateProjection { .. } | Error::NonFiniteGradient(_)
        )
    }
}
