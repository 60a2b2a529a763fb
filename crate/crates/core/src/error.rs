use std::path::Path;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("conversation {id:?}: invalid {field}: {message}")]
    Invalid {
        id: String,
        field: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vocab size {requested} is below the minimum of {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },

    #[error("protected symbol {0:?} collides with a base character")]
    ProtectedCollision(String),

    #[error("piece id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: u32, size: usize },

    #[error("malformed vocabulary file at line {line}: {message}")]
    VocabFormat { line: usize, message: String },

    #[error("reference and hypothesis time extents differ: {reference:?} vs {hypothesis:?}")]
    ExtentMismatch {
        reference: (f64, f64),
        hypothesis: (f64, f64),
    },

    #[error("hypothesis set is empty")]
    EmptyHypotheses,

    #[error("hypotheses without a reference utterance: {}", .0.join(", "))]
    UnknownUtterances(Vec<String>),

    #[error("reference utterances without a hypothesis: {}", .0.join(", "))]
    MissingHypotheses(Vec<String>),

    #[error("duplicate hypotheses for: {}", .0.join(", "))]
    DuplicateHypotheses(Vec<String>),

    #[error("utterance {0} references a conversation or segment missing from the corpus")]
    MissingSource(String),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
