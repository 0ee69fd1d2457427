use std::path::PathBuf;

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on an operation's input was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested edit operation cannot be applied to this transcript
    /// (e.g. deletion or swap on a single-word transcript). Callers may
    /// fall back to insertion or substitution.
    #[error("unsupported edit operation: {0}")]
    UnsupportedOp(String),

    /// Configuration file or field is malformed.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint container is malformed or does not match the config.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
