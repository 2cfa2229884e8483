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

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("embedding file contains no usable vectors")]
    EmptyEmbeddings,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("term `{0}` is not in the vocabulary")]
    UnknownTerm(String),

    #[error("requested {requested} candidates but only {available} are available")]
    InsufficientCandidates { requested: usize, available: usize },

    #[error("duplicate document id `{0}`")]
    DuplicateDocument(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("distractor selection exceeded {0} iterations")]
    IterationCap(usize),

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
