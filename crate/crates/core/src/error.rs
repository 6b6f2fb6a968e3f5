use std::path::PathBuf;

use crate::corpus::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty vocabulary: no token survives filtering")]
    EmptyVocabulary,

    #[error("document {0:?} has no tokens")]
    EmptyDocument(String),

    #[error("token id {token} out of range for vocabulary of {rows} rows")]
    TokenOutOfRange { token: u32, rows: usize },

    #[error("class {0:?} appears in both the training pool and the support set")]
    ClassCollision(String),

    #[error("degenerate noise pool: no negative class available for anchor class {0}")]
    DegenerateNoisePool(ClassId),

    #[error("no positive pairs in batch")]
    NoPositivePairs,

    #[error("class {0} has no category embedding row")]
    MissingCategory(ClassId),

    #[error("epoch {epoch}, batch {batch}: {source}")]
    InBatch {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("divergence at epoch {epoch}, batch {batch}: non-finite loss")]
    Divergence { epoch: usize, batch: usize },

    #[error("insufficient documents in class {class:?}: need {needed}, have {available}")]
    InsufficientDocuments {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("not enough classes: requested {requested}, available {available}")]
    NotEnoughClasses { requested: usize, available: usize },

    #[error("class {0:?} is not covered by the model")]
    Coverage(String),

    #[error("no candidate classes to classify against")]
    NoCandidates,

    #[error("empty query set in episode {0}")]
    EmptyQuerySet(usize),

    #[error("not a checkpoint")]
    NotCheckpoint,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("no precomputed embedding for document {0:?}")]
    MissingEmbedding(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the environment (files, formats) rather
    /// than by the data or the model.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::NotCheckpoint
                | Error::UnsupportedVersion(_)
                | Error::CorruptCheckpoint(_)
        )
    }
}
