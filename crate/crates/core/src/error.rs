use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in document {doc_id}: {reason}")]
    Parse { doc_id: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate doc id {0}")]
    DuplicateDocId(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),

    #[error("expression not supported: {0}")]
    InvalidExpr(String),

    #[error("template {template} expects {expected} attributes, got {got}")]
    Arity {
        template: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("query text does not match any template: {0:?}")]
    UnrecognizedTemplate(String),

    #[error("cannot build an index over an empty corpus")]
    EmptyCorpus,

    #[error("relevance set is empty")]
    EmptyGold,

    #[error("query {0} has no relevance judgments")]
    MissingQrels(String),

    #[error("query {0} has no template metadata")]
    MissingMetadata(String),

    #[error("scorer transport failed: {0}")]
    Transport(String),

    #[error("scorer protocol violation: {0}")]
    Protocol(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
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
