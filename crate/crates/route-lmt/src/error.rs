use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] route_lmt_core::Error),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    /// Malformed or invalid input at a specific line.
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: unsupported version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: String,
        expected: u32,
    },

    #[error("{path}: schema violation: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("invalid synthetic config: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("server error: {0}")]
    Server(String),
}

impl Error {
    /// 2 for problems with user input, 1 for internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Write { .. } | Error::Server(_) => 1,
            _ => 2,
        }
    }
}
