use std::path::PathBuf;

use gotjepa_autodiff::ShapeError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("failed to parse {file}: {detail}")]
    Parse { file: PathBuf, detail: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("initialization error: {0}")]
    Init(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("tracker state error: {0}")]
    State(String),

    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Parse { .. } => "parse",
            Error::UnsupportedVersion { .. } => "version",
            Error::Init(_) => "init",
            Error::Divergence { .. } => "divergence",
            Error::State(_) => "state",
            Error::Prerequisite(_) => "prerequisite",
            Error::Io { .. } => "io",
        }
    }
}

impl From<ShapeError> for Error {
    fn from(e: ShapeError) -> Self {
        Error::Shape(e.0)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
