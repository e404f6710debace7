use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate embedding: norm {norm:e} is below {eps:e}")]
    DegenerateEmbedding { norm: f64, eps: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cannot load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Stable machine-readable category, also used to pick CLI exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::DegenerateEmbedding { .. } => "degenerate",
            Error::Contract(_) => "contract",
            Error::Load { .. } => "load",
            Error::Data(_) => "data",
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
        }
    }

    /// Process exit code for this category; 2 is left for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_) => 3,
            Error::Domain(_) => 4,
            Error::DegenerateEmbedding { .. } => 5,
            Error::Contract(_) => 6,
            Error::Load { .. } => 7,
            Error::Data(_) => 8,
            Error::Io { .. } => 9,
            Error::Format(_) => 10,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
