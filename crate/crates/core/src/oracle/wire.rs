//! JSON wire protocol shared by all remote oracle kinds.
//!
//! Request: `{kind, request_id, question?, candidates?: [{label, digest}],
//! frames?: [digest], answers?: [text], prediction?, truth?, m?}`.
//! Response: `{request_id, samples?: [{answer, confidence}], groups?: [[index]],
//! answer?, sigma?, rationale?, score?}`. Which fields are required depends on
//! the kind.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{OracleError, RawSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Direction,
    Equivalence,
    Answer,
    Grade,
    Relevancy,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKind::Direction => "direction",
            OracleKind::Equivalence => "equivalence",
            OracleKind::Answer => "answer",
            OracleKind::Grade => "grade",
            OracleKind::Relevancy => "relevancy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDigest {
    pub label: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub kind: OracleKind,
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<CandidateDigest>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

impl OracleRequest {
    /// Empty request of `kind` with a fresh process-unique id.
    pub fn new(kind: OracleKind) -> Self {
        Self {
            kind,
            request_id: next_request_id(kind),
            question: None,
            candidates: None,
            frames: None,
            answers: None,
            prediction: None,
            truth: None,
            m: None,
        }
    }

    /// Checks the kind-specific request fields.
    pub fn validate(&self) -> Result<(), String> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(format!("{} request needs {what}", self.kind))
            }
        };
        match self.kind {
            OracleKind::Direction => {
                need(self.question.is_some(), "question")?;
                need(self.candidates.as_ref().is_some_and(|c| !c.is_empty()), "candidates")?;
                need(self.m.is_some_and(|m| m >= 1), "m >= 1")
            }
            OracleKind::Equivalence => need(self.answers.is_some(), "answers"),
            OracleKind::Answer => {
                need(self.question.is_some(), "question")?;
                need(self.frames.as_ref().is_some_and(|f| !f.is_empty()), "frames")
            }
            OracleKind::Grade => need(self.prediction.is_some() && self.truth.is_some(), "prediction and truth"),
            OracleKind::Relevancy => {
                need(self.question.is_some(), "question")?;
                need(self.frames.as_ref().is_some_and(|f| f.len() == 1), "exactly one frame")
            }
        }
    }
}

fn next_request_id(kind: OracleKind) -> String {
    static NONCE: OnceLock<u32> = OnceLock::new();
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nonce = *NONCE.get_or_init(rand::random::<u32>);
    format!("{kind}-{nonce:08x}-{}", COUNTER.fetch_add(1, Ordering::Relaxed))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleResponse {
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl OracleResponse {
    /// Lenient per-sample view: a sample with a missing or mistyped field
    /// becomes a [`RawSample`] with that field unset.
    pub fn raw_samples(&self) -> Vec<RawSample> {
        self.samples
            .iter()
            .flatten()
            .map(|v| RawSample {
                answer: v.get("answer").and_then(Value::as_str).map(str::to_owned),
                confidence: v.get("confidence").and_then(Value::as_f64),
            })
            .collect()
    }
}

/// Parses a response body and checks it against the schema for `kind`.
pub fn parse_response(kind: OracleKind, request_id: &str, body: &str) -> Result<OracleResponse, OracleError> {
    let schema = |reason: String| OracleError::Schema { kind, reason };
    let resp: OracleResponse = serde_json::from_str(body).map_err(|e| schema(e.to_string()))?;
    if resp.request_id != request_id {
        return Err(schema(format!("request_id '{}' does not match '{request_id}'", resp.request_id)));
    }
    match kind {
        OracleKind::Direction if resp.samples.is_none() => Err(schema("missing samples".into())),
        OracleKind::Equivalence if resp.groups.is_none() => Err(schema("missing groups".into())),
        OracleKind::Answer => match &resp.answer {
            Some(a) if !a.trim().is_empty() => Ok(resp),
            _ => Err(schema("missing or empty answer".into())),
        },
        OracleKind::Grade => match resp.sigma {
            Some(1..=5) => Ok(resp),
            other => Err(schema(format!("sigma {other:?} not in 1..=5"))),
        },
        OracleKind::Relevancy => match resp.score {
            Some(s) if s.is_finite() => Ok(resp),
            _ => Err(schema("missing or non-finite score".into())),
        },
        _ => Ok(resp),
    }
}
