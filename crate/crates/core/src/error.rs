use thiserror::Error;

/// Errors raised across the feedback pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no branch for {0}")]
    NoBranch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing blocks: {}", .0.join(", "))]
    MissingBlocks(Vec<String>),

    #[error("missing payload key {0} in reconstructions")]
    MissingPayload(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            Error::Format(_) => 4,
            Error::NoBranch(_) | Error::MissingBlocks(_) => 5,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
