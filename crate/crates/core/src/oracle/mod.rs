//! Pluggable stand-ins for the external models: direction confidence,
//! answer equivalence, free-form answering, grading and relevancy scoring.
//!
//! Every interface has a deterministic scripted implementation for
//! simulation and tests, and a remote implementation speaking one JSON
//! protocol over HTTP (see [`wire`]).

mod remote;
mod scripted;
pub mod wire;

pub use remote::{RemoteAnswerOracle, RemoteClient, RemoteDirectionOracle, RemoteEquivalenceOracle, RemoteGrader, RemoteScorer, RetryPolicy};
pub use scripted::{AnswerPhrasing, SampleKind, ScriptedAnswerOracle, ScriptedDirectionOracle, ScriptedGrader, ScriptedOracleConfig, UNKNOWN_ANSWER};

use crate::answering::{AnswerQuery, Grade};
use crate::exploration::FrontierCandidate;
use crate::mapping::SemanticMap;
use crate::scene::{Observation, QuestionTask};

/// Environment variable that overrides every configured remote endpoint.
pub const ENDPOINT_ENV: &str = "EQA_ORACLE_ENDPOINT";

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("oracle endpoint answered with HTTP {0}")]
    Status(u16),
    #[error("gave up after {attempts} attempts, last error: {last}")]
    Exhausted { attempts: u32, last: Box<OracleError> },
    #[error("{kind} response violates schema: {reason}")]
    Schema { kind: wire::OracleKind, reason: String },
    #[error("invalid endpoint '{0}'")]
    Endpoint(String),
    #[error("oracle unavailable: {0}")]
    Unavailable(String),
}

impl OracleError {
    /// Transport-level problems are worth another attempt; a well-formed but
    /// wrong answer is not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, OracleError::Transport(_) | OracleError::Status(_))
    }
}

/// One direction answer as it came back from the model, before validation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawSample {
    pub answer: Option<String>,
    pub confidence: Option<f64>,
}

impl RawSample {
    pub fn new(answer: impl Into<String>, confidence: f64) -> Self {
        Self {
            answer: Some(answer.into()),
            confidence: Some(confidence),
        }
    }
}

/// Everything a direction model gets to see at one decision step.
#[derive(Debug, Clone, Copy)]
pub struct DirectionQuery<'a> {
    pub question: &'a str,
    pub candidates: &'a [FrontierCandidate],
    pub map: &'a SemanticMap,
    pub step: usize,
    pub m: usize,
}

pub trait DirectionOracle: Send + Sync {
    /// Up to `query.m` answers, each naming a candidate and a raw confidence.
    fn sample_directions(&self, query: &DirectionQuery<'_>) -> Result<Vec<RawSample>, OracleError>;
}

pub trait EquivalenceOracle: Send + Sync {
    /// Partition of `answers` into groups of indices with the same meaning.
    fn classes(&self, answers: &[String]) -> Result<Vec<Vec<usize>>, OracleError>;
}

pub trait AnswerOracle: Send + Sync {
    fn answer(&self, query: &AnswerQuery) -> Result<String, OracleError>;
}

pub trait GraderOracle: Send + Sync {
    fn grade(&self, question: &str, prediction: &str, truth: &str) -> Result<Grade, OracleError>;
}

pub trait RelevancyScorer: Send + Sync {
    /// Image-question relevancy of one observation.
    fn score(&self, obs: &Observation, question: &str, task: &QuestionTask) -> Result<f64, OracleError>;
}

/// Lowercase, strip punctuation, collapse whitespace.
pub fn normalize_text(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Groups answers whose normalized text is identical.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchEquivalence;

impl ExactMatchEquivalence {
    pub fn partition(answers: &[String]) -> Vec<Vec<usize>> {
        let mut keys: Vec<String> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, a) in answers.iter().enumerate() {
            let key = normalize_text(a);
            match keys.iter().position(|k| *k == key) {
                Some(g) => groups[g].push(i),
                None => {
                    keys.push(key);
                    groups.push(vec![i]);
                }
            }
        }
        groups
    }
}

impl EquivalenceOracle for ExactMatchEquivalence {
    fn classes(&self, answers: &[String]) -> Result<Vec<Vec<usize>>, OracleError> {
        Ok(Self::partition(answers))
    }
}
