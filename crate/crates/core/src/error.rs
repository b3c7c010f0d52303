use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A dependency cycle, reported with one edge that closes it.
    #[error("task graph is cyclic: edge {src} -> {dst} lies on a cycle")]
    GraphInvalid { src: u32, dst: u32 },

    #[error("protocol error: {0}")]
    Protocol(String),

    /// A readiness or ownership contract of the scheduler was broken.
    #[error("scheduler bug: {0}")]
    SchedulerBug(String),

    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("invalid metrics: {0}")]
    InvalidMetrics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
