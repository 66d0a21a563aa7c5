use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("numerical abort: {0}")]
    Numerical(String),
    /// A claimed inequality failed its declared tolerance.
    #[error("falsification event: {0}")]
    Falsification(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn falsification(msg: impl Into<String>) -> Self {
        Error::Falsification(msg.into())
    }

    pub fn shape(expected: usize, got: usize) -> Self {
        Error::Shape { expected, got }
    }

    /// Process exit code: 2 config, 3 numerical abort, 4 falsification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape { .. } | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
            Error::Falsification(_) => 4,
        }
    }
}
