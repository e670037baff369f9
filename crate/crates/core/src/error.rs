use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: schema violation on `{field}`: {message}")]
    SchemaViolation {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid event type: {0}")]
    InvalidEventType(String),

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("field `{0}` is not carried by any event of the trace")]
    FieldAbsent(String),

    #[error("empty corpus: at least one trace is required")]
    EmptyCorpus,

    #[error("rule draft for head `{0}` has fewer than two common event types")]
    NotEmittable(String),

    #[error("invalid rule `{id}`: {message}")]
    InvalidRule { id: String, message: String },

    #[error("duplicate rule id `{0}`")]
    DuplicateRuleId(String),

    #[error("timestamp regression: event at {event_us} us is older than monitor clock {clock_us} us")]
    TimestampRegression { event_us: u64, clock_us: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown fault target: {0}")]
    UnknownTarget(String),

    #[error("alerts are not sorted by detection time")]
    UnsortedAlerts,

    #[error("cannot aggregate an empty set of outcomes")]
    EmptySet,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
