use std::path::PathBuf;

use crate::graph::{EntityId, RelationId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown entity type `{0}`")]
    UnknownType(String),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("entity id {0} is not registered")]
    UnregisteredEntity(u32),

    #[error("relation id {0} is not registered")]
    UnregisteredRelation(u32),

    #[error("duplicate entity `{0}`")]
    DuplicateEntity(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(
        "triple ({head}, {relation}, {tail}) violates relation types: expected {expected_head} -> {expected_tail}, got {actual_head} -> {actual_tail}"
    )]
    TypeMismatch {
        head: String,
        relation: String,
        tail: String,
        expected_head: String,
        expected_tail: String,
        actual_head: String,
        actual_tail: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid pattern: {0}")]
    InvalidPattern(String),

    #[error("relation {0:?} has no reasoning module")]
    MissingModule(RelationId),

    #[error("empty candidate set for next-hop distribution")]
    EmptyCandidates,

    #[error("entity {0:?} has no embedding row")]
    MissingEmbedding(EntityId),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("empty profile")]
    EmptyProfile,

    #[error("sample pattern mismatch: expected {expected}, found {found}")]
    PatternMismatch { expected: String, found: String },

    #[error("{what} fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
