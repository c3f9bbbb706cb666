use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(
        "edge #{index} ({src} -> {dst}): node id out of range for a graph of {num_nodes} nodes"
    )]
    EdgeOutOfRange {
        index: usize,
        src: usize,
        dst: usize,
        num_nodes: usize,
    },

    #[error("edge #{index} ({src} -> {dst}): weight {weight} is not a finite nonnegative number")]
    InvalidWeight {
        index: usize,
        src: usize,
        dst: usize,
        weight: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at {phase} round {round}, step {step}: {message}")]
    Diverged {
        phase: &'static str,
        round: usize,
        step: usize,
        message: String,
    },
}

/// Coarse classification used by the command-line driver to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => ErrorKind::Config,
            Error::EdgeOutOfRange { .. }
            | Error::InvalidWeight { .. }
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Io { .. } => ErrorKind::Data,
            Error::NonFinite(_) | Error::Diverged { .. } => ErrorKind::Numeric,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
