use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} (entry {index}): {message}")]
    Parse {
        path: PathBuf,
        index: usize,
        message: String,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema `{db_id}` is invalid: {message}")]
    InvalidSchema { db_id: String, message: String },

    #[error("unknown db_id `{0}`")]
    UnknownDb(String),

    #[error("sql tokenization error at byte {offset}: {message}")]
    Tokenize { offset: usize, message: String },

    #[error("sql syntax error: {0}")]
    Syntax(String),

    #[error("unsupported sql construct: {0}")]
    Unsupported(String),

    #[error("cannot resolve `{reference}` in schema `{db_id}`")]
    Unresolved { db_id: String, reference: String },

    #[error("ambiguous column `{column}` in schema `{db_id}` (candidates: {candidates})")]
    Ambiguous {
        db_id: String,
        column: String,
        candidates: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("question is already tagged: {0}")]
    AlreadyTagged(String),

    #[error("database error: {0}")]
    Database(#[from] rusqlite::Error),

    #[error("{stage}: {message}")]
    Component { stage: &'static str, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn component(stage: &'static str, message: impl std::fmt::Display) -> Self {
        Error::Component {
            stage,
            message: message.to_string(),
        }
    }
}
