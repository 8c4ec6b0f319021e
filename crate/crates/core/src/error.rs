use std::io;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped by the subsystem that raises them; callers that need
/// to map errors onto a wire protocol can use [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },
    #[error("empty vector")]
    EmptyVector,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown document `{id}`")]
    DanglingReference { line: usize, id: String },
    #[error("line {line}: {message}")]
    InvalidRecord { line: usize, message: String },

    #[error("no embedding for document `{0}`")]
    MissingEmbedding(String),
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error("graph changed while the refresh was being planned")]
    ConcurrentModification,

    #[error("snapshot: bad magic")]
    BadMagic,
    #[error("snapshot: unsupported format version {0}")]
    UnsupportedFormat(u32),
    #[error("snapshot: truncated ({0})")]
    Truncated(String),
    #[error("snapshot: corrupt ({0})")]
    Corrupt(String),

    #[error("embedding provider: {0}")]
    Provider(String),

    #[error("unknown episode `{0}`")]
    UnknownEpisode(String),
    #[error("episode `{id}` is {state}, not awaiting responses")]
    EpisodeClosed { id: String, state: String },
    #[error("expected {expected} responses, got {actual}")]
    WrongResponseCount { expected: usize, actual: usize },
    #[error("response for query `{actual}` in an episode for `{expected}`")]
    QueryMismatch { expected: String, actual: String },
    #[error("no triplet is fully contained in the active corpus ({active_size} docs); advance the curriculum")]
    NoEligibleTriplet { active_size: usize },

    #[error("relevance set is empty")]
    EmptyRelevantSet,
    #[error("no relevance judgments for queries: {}", .0.join(", "))]
    MissingQrels(Vec<String>),

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the CLI and the HTTP layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InvalidInput,
    Data,
    NotFound,
    Conflict,
    Snapshot,
    Provider,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            DimensionMismatch { .. }
            | ZeroNorm
            | NonFinite { .. }
            | EmptyVector
            | InvalidArgument(_)
            | WrongResponseCount { .. }
            | QueryMismatch { .. }
            | EmptyRelevantSet
            | MissingQrels(_) => ErrorKind::InvalidInput,
            Parse { .. }
            | DuplicateId { .. }
            | DanglingReference { .. }
            | InvalidRecord { .. }
            | MissingEmbedding(_)
            | Json(_) => ErrorKind::Data,
            UnknownNode(_) | UnknownDocument(_) | UnknownEpisode(_) => ErrorKind::NotFound,
            EpisodeClosed { .. } | NoEligibleTriplet { .. } | ConcurrentModification => {
                ErrorKind::Conflict
            }
            BadMagic | UnsupportedFormat(_) | Truncated(_) | Corrupt(_) => ErrorKind::Snapshot,
            Provider(_) => ErrorKind::Provider,
            Io(_) => ErrorKind::Io,
        }
    }

    /// Short snake_case tag, stable across releases.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            DimensionMismatch { .. } => "dimension_mismatch",
            ZeroNorm => "zero_norm",
            NonFinite { .. } => "non_finite",
            EmptyVector => "empty_vector",
            InvalidArgument(_) => "invalid_argument",
            Parse { .. } => "parse_error",
            DuplicateId { .. } => "duplicate_id",
            DanglingReference { .. } => "dangling_reference",
            InvalidRecord { .. } => "invalid_record",
            MissingEmbedding(_) => "missing_embedding",
            UnknownNode(_) => "unknown_node",
            UnknownDocument(_) => "unknown_document",
            ConcurrentModification => "concurrent_modification",
            BadMagic => "bad_magic",
            UnsupportedFormat(_) => "unsupported_format",
            Truncated(_) => "truncated",
            Corrupt(_) => "corrupt_snapshot",
            Provider(_) => "provider_error",
            UnknownEpisode(_) => "unknown_episode",
            EpisodeClosed { .. } => "episode_closed",
            WrongResponseCount { .. } => "wrong_response_count",
            QueryMismatch { .. } => "query_mismatch",
            NoEligibleTriplet { .. } => "no_eligible_triplet",
            EmptyRelevantSet => "empty_relevant_set",
            MissingQrels(_) => "missing_qrels",
            Io(_) => "io_error",
            Json(_) => "json_error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
