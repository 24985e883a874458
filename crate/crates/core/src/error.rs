use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("state mismatch: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate pose in frame {frame}: torso length {length:e}")]
    DegeneratePose { frame: usize, length: f64 },

    #[error("unrecoverable gap for joint {joint}: frames {start}..={end} missing")]
    UnrecoverableGap { joint: usize, start: usize, end: usize },

    #[error("joint {joint} is never observed")]
    NeverObserved { joint: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },

    #[error("checkpoint format version {found} cannot be loaded (expected {expected})")]
    Migration { found: u64, expected: u64 },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
