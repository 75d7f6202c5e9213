use crate::ids::{PeerId, Uid};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("line {line}: {message}")]
    ParseAt { line: usize, message: String },

    #[error("replay gap for {ego}: expected seq {expected}, got {got}")]
    ReplayGap { ego: Uid, expected: u64, got: u64 },

    #[error("unknown user {0}")]
    UnknownUser(Uid),

    #[error("unknown peer {0}")]
    UnknownPeer(PeerId),

    #[error("{alter} is not a direct neighbor of {ego}")]
    UndefinedPair { ego: Uid, alter: Uid },

    #[error("access denied by the policy of {owner}")]
    AccessDenied { owner: Uid },

    #[error("service unavailable: no online trusted peer for {0}")]
    ServiceUnavailable(Uid),

    #[error("user {0} is already registered")]
    DuplicateUser(Uid),

    #[error("user {0} has no location")]
    MissingLocation(Uid),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("infeasible mapping: {0}")]
    Mapping(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
