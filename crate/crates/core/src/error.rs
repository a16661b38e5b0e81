use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no jointly valid pixels between the two depth maps")]
    NoOverlap,

    #[error("view {view} has {count} valid sparse depth samples, at least {required} are required")]
    DegenerateSupervision {
        view: usize,
        count: usize,
        required: usize,
    },

    #[error("numeric failure in {context}{}", .ray.map(|r| format!(" (ray {r})")).unwrap_or_default())]
    NumericFailure {
        context: String,
        ray: Option<usize>,
    },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("ingest failed: {0}")]
    Ingest(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn numeric(context: impl Into<String>, ray: Option<usize>) -> Self {
        Error::NumericFailure {
            context: context.into(),
            ray,
        }
    }

    /// Process exit code for the CLI: 1 configuration, 2 ingest, 3 numeric, 4 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => 1,
            Error::Ingest(_) | Error::Format { .. } => 2,
            Error::NumericFailure { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 4,
        }
    }
}
