use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("qualified pool is empty (min_quality = {min_quality})")]
    EmptyPool { min_quality: f64 },

    #[error("no safe placement: no row satisfies reach >= {min_reach} and engagement share <= {max_share}\n{dump}")]
    NoSafePlacement {
        min_reach: f64,
        max_share: f64,
        dump: String,
    },

    #[error("pool exhausted: could not draw {wanted} titles absent from the row after {attempts} attempts")]
    PoolExhausted { wanted: usize, attempts: usize },

    #[error("lift undefined: control mean is zero")]
    UndefinedLift,

    #[error("no events match the filter")]
    NoMatchingEvents,

    #[error("config error: {0}")]
    Config(String),

    #[error("artifact mismatch: {path} was produced by manifest {found}, expected {expected}")]
    ManifestMismatch {
        path: String,
        found: String,
        expected: String,
    },

    #[error("parse error in {path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
