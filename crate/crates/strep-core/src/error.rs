use std::path::PathBuf;

/// Crate-wide error type. The CLI maps variants onto exit codes
/// (config/usage = 1, io = 2, numeric/generation = 3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller violated an operation's preconditions (shape or dimension
    /// mismatch, empty input, bad argument).
    #[error("usage: {0}")]
    Usage(String),

    /// Invalid or contradictory configuration.
    #[error("config: {0}")]
    Config(String),

    /// A forward value or gradient became non-finite, or an optimization
    /// diverged.
    #[error("numeric: {0}")]
    Numeric(String),

    /// The simulator could not produce a valid sample.
    #[error("generation: {0}")]
    Generation(String),

    /// Malformed file contents; `offset` is the byte position of the
    /// first invalid datum when known.
    #[error("format: {path}: {msg}{}", offset.map(|o| format!(" (byte offset {o})")).unwrap_or_default())]
    Format {
        path: PathBuf,
        msg: String,
        offset: Option<u64>,
    },

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn generation(msg: impl Into<String>) -> Self {
        Error::Generation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>, offset: Option<u64>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
            offset,
        }
    }
}
