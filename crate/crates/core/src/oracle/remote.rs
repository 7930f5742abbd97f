use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{parse_response, CandidateDigest, OracleKind, OracleRequest, OracleResponse};
use super::{AnswerOracle, DirectionOracle, DirectionQuery, EquivalenceOracle, GraderOracle, OracleError, RawSample, RelevancyScorer};
use crate::answering::{AnswerQuery, FrameDigest, Grade};
use crate::scene::{Observation, QuestionTask, SceneGrid};

/// Exponential backoff: attempt `i` (0-based) that fails is followed by a
/// sleep of `base * factor^i` before the next attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_backoff_ms: u64,
    pub factor: f64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_backoff_ms: 500,
            factor: 2.0,
            timeout_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.base_backoff_ms as f64 / 1000.0 * self.factor.powi(attempt as i32))
    }
}

/// Blocking JSON-over-HTTP client for the oracle protocol. Safe to share
/// across threads; request ids keep concurrent responses apart.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    endpoint: String,
    policy: RetryPolicy,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(endpoint: &str, policy: RetryPolicy) -> Result<Self, OracleError> {
        let well_formed = ["http://", "https://"]
            .iter()
            .any(|p| endpoint.strip_prefix(p).is_some_and(|rest| !rest.is_empty() && !rest.starts_with('/')));
        if !well_formed {
            return Err(OracleError::Endpoint(endpoint.to_owned()));
        }
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(policy.timeout_ms)))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            endpoint: endpoint.to_owned(),
            policy,
            agent: ureq::Agent::new_with_config(config),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// POSTs `request`, retrying transport failures and non-2xx statuses with
    /// backoff. A response that parses but violates the schema is returned
    /// as an error immediately.
    pub fn call(&self, request: &OracleRequest) -> Result<OracleResponse, OracleError> {
        request.validate().map_err(|reason| OracleError::Schema { kind: request.kind, reason })?;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_retryable() && attempt < self.policy.retries => {
                    thread::sleep(self.policy.backoff(attempt));
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(OracleError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn attempt(&self, request: &OracleRequest) -> Result<OracleResponse, OracleError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(request)
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(OracleError::Status(status));
        }
        let body = resp.body_mut().read_to_string().map_err(|e| OracleError::Transport(e.to_string()))?;
        parse_response(request.kind, &request.request_id, &body)
    }
}

pub struct RemoteDirectionOracle(pub RemoteClient);

impl DirectionOracle for RemoteDirectionOracle {
    fn sample_directions(&self, query: &DirectionQuery<'_>) -> Result<Vec<RawSample>, OracleError> {
        let mut req = OracleRequest::new(OracleKind::Direction);
        req.question = Some(query.question.to_owned());
        req.candidates = Some(
            query
                .candidates
                .iter()
                .map(|c| CandidateDigest {
                    label: c.label.to_string(),
                    digest: format!(
                        "frontier at ({}, {}), cluster of {} cells, {} steps away, semantic value {:.3}",
                        c.point.x, c.point.y, c.cluster_size, c.path_cost, c.semantic_score
                    ),
                })
                .collect(),
        );
        req.m = Some(query.m);
        Ok(self.0.call(&req)?.raw_samples())
    }
}

pub struct RemoteEquivalenceOracle(pub RemoteClient);

impl EquivalenceOracle for RemoteEquivalenceOracle {
    fn classes(&self, answers: &[String]) -> Result<Vec<Vec<usize>>, OracleError> {
        let mut req = OracleRequest::new(OracleKind::Equivalence);
        req.answers = Some(answers.to_vec());
        Ok(self.0.call(&req)?.groups.unwrap_or_default())
    }
}

pub struct RemoteAnswerOracle(pub RemoteClient);

impl AnswerOracle for RemoteAnswerOracle {
    fn answer(&self, query: &AnswerQuery) -> Result<String, OracleError> {
        let mut req = OracleRequest::new(OracleKind::Answer);
        req.question = Some(query.question.clone());
        req.frames = Some(query.frames.iter().map(|f| f.digest.render()).collect());
        Ok(self.0.call(&req)?.answer.unwrap_or_default())
    }
}

pub struct RemoteGrader(pub RemoteClient);

impl GraderOracle for RemoteGrader {
    fn grade(&self, question: &str, prediction: &str, truth: &str) -> Result<Grade, OracleError> {
        let mut req = OracleRequest::new(OracleKind::Grade);
        req.question = Some(question.to_owned());
        req.prediction = Some(prediction.to_owned());
        req.truth = Some(truth.to_owned());
        let resp = self.0.call(&req)?;
        Ok(Grade {
            sigma: resp.sigma.expect("validated by parse_response") as u8,
            rationale: resp.rationale.unwrap_or_else(|| "remote grader".into()),
            flagged: false,
        })
    }
}

/// Relevancy from a remote model; frames are sent as rendered digests.
pub struct RemoteScorer {
    pub client: RemoteClient,
    pub scene: Arc<SceneGrid>,
}

impl RelevancyScorer for RemoteScorer {
    fn score(&self, obs: &Observation, question: &str, _task: &QuestionTask) -> Result<f64, OracleError> {
        let mut req = OracleRequest::new(OracleKind::Relevancy);
        req.question = Some(question.to_owned());
        req.frames = Some(vec![FrameDigest::capture(obs, &self.scene).render()]);
        Ok(self.client.call(&req)?.score.expect("validated by parse_response"))
    }
}
