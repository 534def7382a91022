use std::io;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("sentence index {index} out of bounds (document has {len} sentences)")]
    SentenceOutOfBounds { index: usize, len: usize },

    #[error("overlapping mentions at char {0}")]
    OverlappingMentions(usize),

    #[error("text does not mention entity `{0}`")]
    MissingMention(String),

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("gold index {gold} out of range for {len} candidates")]
    GoldOutOfRange { gold: usize, len: usize },

    #[error("expected a {expected} instance, found {found}")]
    WrongOrientation {
        expected: &'static str,
        found: &'static str,
    },

    #[error("empty text")]
    EmptyText,

    #[error("empty training data")]
    EmptyData,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("alien entity pool too small: need {needed}, have {available}")]
    PoolTooSmall { needed: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error(transparent)]
    Parse(#[from] crate::corpus::ParseError),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
