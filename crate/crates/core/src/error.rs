use std::path::PathBuf;

use thiserror::Error;

use crate::genome::GenomeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed encoding: {0}")]
    MalformedEncoding(String),

    #[error("invalid operation code {0} (expected 0..=10)")]
    InvalidOp(u8),

    #[error("invalid cell structure: {0}")]
    InvalidCell(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient pool: need {needed} individuals, have {available}")]
    InsufficientPool { needed: usize, available: usize },

    #[error("genome {0} has not been evaluated")]
    Unevaluated(GenomeId),

    #[error("evaluation of genome {genome} failed: {message}")]
    Evaluation { genome: GenomeId, message: String },

    #[error("evaluation of genome {genome} timed out after {seconds} s")]
    Timeout { genome: GenomeId, seconds: u64 },

    #[error("trainer protocol error: {0}")]
    Protocol(String),

    #[error("missing checkpoint for genome {0}")]
    MissingCheckpoint(GenomeId),

    #[error("cannot resume genome {genome}: {message}")]
    Resume { genome: GenomeId, message: String },

    #[error("mismatched ranking id sets")]
    RankingMismatch,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Evaluator failures that a caller may retry.
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            Error::Evaluation { .. } | Error::Timeout { .. } | Error::Protocol(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
