use std::path::PathBuf;

use crate::kg::Triple;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("triple #{index} {triple:?} references an id out of range ({reason})")]
    TripleOutOfRange {
        index: usize,
        triple: Triple,
        reason: &'static str,
    },

    #[error("entity {0} is not in the graph")]
    UnknownEntity(u32),

    #[error("source set is empty")]
    EmptySources,

    #[error("ungroundable shape {0} under this type system")]
    Ungroundable(&'static str),

    #[error("could not sample a non-degenerate graph after {0} attempts")]
    SamplingExhausted(usize),

    #[error("case {0} has a zero-norm embedding")]
    ZeroNorm(u64),

    #[error("case {case} has embedding dimension {got}, expected {expected}")]
    EmbeddingDim { case: u64, got: usize, expected: usize },

    #[error("k must be at least 1")]
    InvalidK,

    #[error("case {0} has neither an embedding nor a pattern type id")]
    UnkeyedCase(u64),

    #[error("no usable cases")]
    NoUsableCases,

    #[error("query subgraph has no labeled answer")]
    NoAnswers,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite loss ({loss}) at epoch {epoch}, step {step}: {diagnostics}")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        step: usize,
        diagnostics: String,
    },

    #[error("unknown pattern type {0}")]
    UnknownPatternType(u32),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (paths, file contents, flags)
    /// rather than a failure inside the library.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Config(_)
                | Error::File { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Checkpoint(_)
                | Error::EmbeddingDim { .. }
                | Error::ZeroNorm(_)
                | Error::InvalidK
                | Error::TripleOutOfRange { .. }
        )
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
