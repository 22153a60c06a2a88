use thiserror::Error;

/// Broad error category; the CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Backend,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("no entry for id {0:?}")]
    Lookup(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("duplicate request id {0:?}")]
    DuplicateId(String),

    #[error("queue is empty")]
    EmptyQueue,

    #[error("engine {engine} ({name}): {source}")]
    Backend {
        engine: usize,
        name: String,
        #[source]
        source: BackendError,
    },

    #[error("quality estimator: {0}")]
    Qe(#[source] BackendError),

    #[error("run aborted after {completed} completed steps: {source}")]
    Run {
        completed: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid cell (max_mts={max_mts}, alpha={alpha}) repetition {repetition}: {source}")]
    Cell {
        max_mts: usize,
        alpha: f64,
        repetition: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::Dimension { .. }
            | Error::Label { .. }
            | Error::Invalid(_)
            | Error::Lookup(_)
            | Error::Format(_)
            | Error::DuplicateId(_)
            | Error::Io(_) => ErrorClass::Config,
            Error::Backend { .. } | Error::Qe(_) => ErrorClass::Backend,
            Error::EmptyQueue | Error::Invariant(_) => ErrorClass::Internal,
            Error::Run { source, .. } | Error::Cell { source, .. } => source.class(),
        }
    }
}

/// Failure reported by a translation or quality-estimation backend.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {message}")]
    Status { status: u16, message: String },
    #[error("malformed response body: {0}")]
    Malformed(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
