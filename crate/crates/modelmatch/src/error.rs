use std::path::PathBuf;

use thiserror::Error;

/// Errors across the pipeline, grouped so the CLI can map them to exit codes:
/// 1 for usage/config, 2 for data/parse, 3 for numeric/training failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("gene mismatch: {0}")]
    GeneMismatch(String),

    #[error("normalization state mismatch: expected {expected}, found {found}")]
    NormState { expected: String, found: String },

    #[error("unknown identifier: {0}")]
    UnknownIdentifier(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate separation: the farthest expected distance must be positive")]
    DegenerateSeparation,

    #[error("training failed at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Parse { .. }
            | Error::EmptyDataset(_)
            | Error::DimensionMismatch(_)
            | Error::GeneMismatch(_)
            | Error::NormState { .. }
            | Error::UnknownIdentifier(_)
            | Error::Data(_)
            | Error::Io { .. } => 2,
            Error::DegenerateSeparation | Error::Training { .. } | Error::Solver(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
