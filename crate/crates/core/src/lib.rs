//! Deterministic embodied question answering: a grid-world agent explores a
//! scene guided by verbalized direction confidences, stops once a frame is a
//! relevancy outlier, and answers from the most relevant frames.

use std::path::PathBuf;

pub mod answering;
pub mod confidence;
pub mod engine;
pub mod exploration;
pub mod mapping;
pub mod oracle;
pub mod relevancy;
pub mod scene;
pub mod seeding;
pub mod stopping;

use answering::AnswerError;
use confidence::ConfidenceError;
use exploration::ExplorationError;
use mapping::MapError;
use oracle::OracleError;
use relevancy::RelevancyError;
use scene::SceneError;
use stopping::StoppingError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Exploration(#[from] ExplorationError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Relevancy(#[from] RelevancyError),
    #[error(transparent)]
    Stopping(#[from] StoppingError),
    #[error(transparent)]
    Answer(#[from] AnswerError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {reason}", path.display())]
    Log { path: PathBuf, line: usize, reason: String },
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status: 1 for bad input, 2 for oracle failures, 3 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Scene(_) | Error::Config(_) | Error::Io { .. } | Error::Log { .. } => 1,
            Error::Stopping(StoppingError::InvalidPolicy(_)) | Error::Exploration(ExplorationError::InvalidWeights) => 1,
            Error::Relevancy(RelevancyError::BaseStd(_) | RelevancyError::Exponent(_)) => 1,
            Error::Oracle(OracleError::Endpoint(_)) => 1,
            Error::Oracle(_)
            | Error::Confidence(ConfidenceError::Oracle(_) | ConfidenceError::AllMalformed(_))
            | Error::Relevancy(RelevancyError::Oracle(_) | RelevancyError::NonFinite(_))
            | Error::Answer(AnswerError::Oracle(_) | AnswerError::EmptyAnswer) => 2,
            _ => 3,
        }
    }
}
