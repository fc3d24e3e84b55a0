use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the analysis engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },

    #[error("duplicate sample id: {0}")]
    DuplicateId(String),

    #[error("empty sample id at line {0}")]
    EmptyId(usize),

    #[error("dimension mismatch for {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("sample count mismatch: {context}")]
    CountMismatch { context: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("zero-norm embedding: {0}")]
    ZeroNormEmbedding(String),

    #[error("zero vector passed to cosine similarity")]
    ZeroVector,

    #[error("unknown metric: {0}")]
    UnknownMetric(String),

    #[error("unknown sample id: {0}")]
    UnknownSample(String),

    #[error("invalid metric descriptor {name}: {message}")]
    InvalidMetric { name: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("missing captions for samples: {}", .0.join(", "))]
    MissingCaptions(Vec<String>),

    #[error("no captioned members in subgroup {0}")]
    NoCaptions(String),

    #[error("uniform performance in subgroup {subgroup} on {metric}: use subgroup summary as candidate issue")]
    UniformPerformance { subgroup: String, metric: String },

    #[error("could not parse concepts from gateway response")]
    UnparseableResponse { raw: String },

    #[error("alpha mismatch: {0} vs {1}")]
    AlphaMismatch(f64, f64),

    #[error("invalid prompt template: {0}")]
    Template(String),

    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }
}
