//! Retrieval of the most relevant frames, answer query assembly, grading and
//! the aggregate metrics.
//!
//! Nothing here looks at scene ground truth. Answers are produced from
//! [`FrameDigest`]s, which are what an episode log records per step.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::oracle::{AnswerOracle, GraderOracle, OracleError};
use crate::relevancy::RelevancyScore;
use crate::scene::{Observation, SceneGrid};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum AnswerError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot aggregate an empty list")]
    Empty,
    #[error("answer oracle returned an empty answer")]
    EmptyAnswer,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// An object as seen in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub id: String,
    pub label: String,
    pub attributes: BTreeMap<String, String>,
    /// Fraction of the object's cells in view.
    pub fraction: f64,
}

/// Text-level summary of an observation: where the agent stood and which
/// objects it saw. This is the stand-in for an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDigest {
    pub step: usize,
    pub room: Option<String>,
    pub objects: Vec<ObjectView>,
}

impl FrameDigest {
    pub fn capture(obs: &Observation, scene: &SceneGrid) -> Self {
        let objects = obs
            .visible_object_fractions
            .iter()
            .filter_map(|(id, &fraction)| {
                let obj = &scene.objects()[scene.object_index(id)?];
                Some(ObjectView {
                    id: obj.id.clone(),
                    label: obj.label.clone(),
                    attributes: obj.attributes.clone(),
                    fraction,
                })
            })
            .collect();
        Self {
            step: obs.step,
            room: scene.room_at(obs.pose.cell()).map(|r| r.label.clone()),
            objects,
        }
    }

    /// One-line rendering, stable across runs.
    pub fn render(&self) -> String {
        let mut out = format!("step {} in {}: ", self.step, self.room.as_deref().unwrap_or("unlabelled space"));
        if self.objects.is_empty() {
            out.push_str("no objects in view");
            return out;
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if i > 0 {
                out.push_str("; ");
            }
            let _ = write!(out, "{} ({})", obj.label, obj.id);
            if !obj.attributes.is_empty() {
                let attrs: Vec<String> = obj.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let _ = write!(out, " [{}]", attrs.join(", "));
            }
            let _ = write!(out, " {:.0}% visible", obj.fraction * 100.0);
        }
        out
    }
}

/// A frame from the episode history together with its relevancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryFrame {
    pub digest: FrameDigest,
    pub score: RelevancyScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedFrame {
    pub step: usize,
    pub score: f64,
    pub digest: FrameDigest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSet {
    pub question: String,
    pub k: usize,
    /// Score-descending, ties broken by earlier step.
    pub frames: Vec<RetrievedFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerQuery {
    pub question: String,
    pub frames: Vec<RetrievedFrame>,
    /// Prompt text handed to text-based answer models.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub sigma: u8,
    pub rationale: String,
    /// Set when the grade is a fallback rather than a judgement.
    #[serde(default)]
    pub flagged: bool,
}

impl Grade {
    pub fn unavailable() -> Self {
        Self {
            sigma: 1,
            rationale: "grader unavailable".into(),
            flagged: true,
        }
    }
}

/// The `k` highest-scoring frames of `history`.
pub fn top_k(question: &str, history: &[HistoryFrame], k: usize) -> Result<RetrievalSet, AnswerError> {
    if k == 0 {
        return Err(AnswerError::ZeroK);
    }
    if history.is_empty() {
        return Err(AnswerError::EmptyHistory);
    }
    let mut order: Vec<&HistoryFrame> = history.iter().collect();
    order.sort_by(|a, b| b.score.value.total_cmp(&a.score.value).then(a.score.step.cmp(&b.score.step)));
    let frames = order
        .into_iter()
        .take(k)
        .map(|h| RetrievedFrame {
            step: h.score.step,
            score: h.score.value,
            digest: h.digest.clone(),
        })
        .collect();
    Ok(RetrievalSet {
        question: question.to_owned(),
        k,
        frames,
    })
}

pub fn assemble_query(retrieval: &RetrievalSet) -> AnswerQuery {
    let mut text = String::new();
    let _ = writeln!(text, "Question: {}", retrieval.question);
    let _ = writeln!(text, "Frames, most relevant first:");
    for (i, f) in retrieval.frames.iter().enumerate() {
        let _ = writeln!(text, "[{}] relevancy {:.6} | {}", i + 1, f.score, f.digest.render());
    }
    text.push_str("Answer the question in a few words.\n");
    AnswerQuery {
        question: retrieval.question.clone(),
        frames: retrieval.frames.clone(),
        text,
    }
}

/// Free-form answer, retrying oracle failures up to `retries` times.
pub fn answer(oracle: &dyn AnswerOracle, query: &AnswerQuery, retries: u32) -> Result<String, AnswerError> {
    let mut attempt = 0;
    let text = loop {
        match oracle.answer(query) {
            Ok(a) => break a,
            Err(_) if attempt < retries => attempt += 1,
            Err(e) => return Err(e.into()),
        }
    };
    let text = text.trim();
    if text.is_empty() {
        return Err(AnswerError::EmptyAnswer);
    }
    Ok(text.to_owned())
}

/// Never fails: a broken grader or an out-of-range score yields σ = 1, flagged.
pub fn grade(grader: &dyn GraderOracle, question: &str, prediction: &str, truth: &str) -> Grade {
    match grader.grade(question, prediction, truth) {
        Ok(g) if (1..=5).contains(&g.sigma) => g,
        _ => Grade::unavailable(),
    }
}

/// Per-question contribution to LLM-Match before averaging.
pub fn sigma_to_percent(sigma: u8) -> f64 {
    (sigma as f64 - 1.0) / 4.0 * 100.0
}

pub fn llm_match(grades: &[Grade]) -> Result<f64, AnswerError> {
    if grades.is_empty() {
        return Err(AnswerError::Empty);
    }
    Ok(grades.iter().map(|g| sigma_to_percent(g.sigma)).sum::<f64>() / grades.len() as f64)
}

pub fn average_steps(steps: &[usize]) -> Result<f64, AnswerError> {
    if steps.is_empty() {
        return Err(AnswerError::Empty);
    }
    Ok(steps.iter().sum::<usize>() as f64 / steps.len() as f64)
}
