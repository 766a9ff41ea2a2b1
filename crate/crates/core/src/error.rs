use std::path::PathBuf;

use crate::trace::TracedExample;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("could not extract reasoning/final_answer: {0}")]
    Parse(String),

    #[error("alignment error at byte {offset}: {message}")]
    Alignment { offset: usize, message: String },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("provider lacks capability: {0}")]
    Capability(String),

    #[error("context/continuation boundary misaligned: token spans bytes {token_start}..{token_end} but context ends at {context_len}")]
    Boundary {
        context_len: usize,
        token_start: usize,
        token_end: usize,
    },

    #[error("trace acquisition aborted after {} completed traces: {source}", completed.len())]
    PartialResults {
        completed: Vec<TracedExample>,
        dropped: Vec<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("{}:{line}: {message}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 validation, 2 provider, 3 data/alignment.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) => 1,
            Error::Provider(_) | Error::Capability(_) | Error::PartialResults { .. } => 2,
            Error::Parse(_)
            | Error::Alignment { .. }
            | Error::DegenerateFit(_)
            | Error::UndefinedCorrelation(_)
            | Error::Boundary { .. }
            | Error::Record { .. }
            | Error::Data(_)
            | Error::Io { .. } => 3,
        }
    }
}
