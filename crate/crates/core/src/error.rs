use thiserror::Error;

use crate::mtp::LanguageTag;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid language tag: {0:?}")]
    InvalidLanguageTag(String),

    #[error("sentence text is empty")]
    EmptySentence,

    #[error("direction must change language, got {0} -> {0}")]
    SameLanguageDirection(LanguageTag),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("template {id:?} is missing placeholder {placeholder}")]
    MissingPlaceholder { id: String, placeholder: &'static str },

    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),

    #[error("language mismatch: {0} vs {1}")]
    LanguageMismatch(LanguageTag, LanguageTag),

    #[error("unsupported direction {src} -> {tgt}")]
    UnsupportedDirection { src: LanguageTag, tgt: LanguageTag },

    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),

    #[error("backend protocol error: {0}")]
    Protocol(String),

    #[error("empty generation")]
    EmptyGeneration,

    #[error("reconstruction set is empty")]
    EmptyReconstructionSet,

    #[error("node {0} has not been visited")]
    UnvisitedNode(usize),

    #[error("search tree has no candidate nodes")]
    EmptyTree,

    #[error("node budget of {0} expansions is exhausted")]
    BudgetExhausted(usize),

    #[error("token {token:?} is not in the range of {lang}")]
    OutOfRangeToken { token: String, lang: LanguageTag },

    #[error("length mismatch: source has {src} tokens, output has {out}")]
    LengthMismatch { src: usize, out: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Transport-level failures that a client may retry.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::BackendUnreachable(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
