//! JSON-lines episode logs and their human-readable replay.
//!
//! A log is a `header` line, one `step` line per decision-loop iteration and
//! a closing `result` line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::answering::{FrameDigest, Grade};
use crate::confidence::ConfidenceSample;
use crate::exploration::FrontierCandidate;
use crate::mapping::{Belief, SemanticMap};
use crate::scene::{Coord, Pose};
use crate::stopping::StopDecision;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Decisive,
    Budget,
    /// No reachable frontier was left.
    Exhausted,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Decisive => "decisive",
            StopReason::Budget => "budget",
            StopReason::Exhausted => "exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub config_digest: String,
    pub task_id: String,
    pub question: String,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    /// Pose at which the observation was taken.
    pub pose: Pose,
    /// Visible free cells.
    pub free: Vec<Coord>,
    /// Visible wall cells.
    pub walls: Vec<Coord>,
    pub digest: FrameDigest,
    /// Candidates with the confidences assigned at this step.
    pub candidates: Vec<FrontierCandidate>,
    pub samples: Vec<ConfidenceSample>,
    pub uniform_fallback: bool,
    pub equivalence_fallback: bool,
    pub chosen: Option<char>,
    pub relevancy: f64,
    pub z: Option<f64>,
    pub decision: StepDecision,
}

/// What the loop decided after a step. Exactly one step per finished
/// episode carries a stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepDecision {
    Continue,
    StopDecisive,
    StopBudget,
    StopExhausted,
}

impl StepDecision {
    pub fn is_stop(self) -> bool {
        self != StepDecision::Continue
    }
}

impl From<StopDecision> for StepDecision {
    fn from(d: StopDecision) -> Self {
        match d {
            StopDecision::Continue => StepDecision::Continue,
            StopDecision::StopDecisive => StepDecision::StopDecisive,
            StopDecision::StopBudget => StepDecision::StopBudget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Validation,
    Oracle,
    Internal,
}

impl FailureKind {
    pub fn exit_code(self) -> u8 {
        match self {
            FailureKind::Validation => 1,
            FailureKind::Oracle => 2,
            FailureKind::Internal => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeError {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Absent when the episode was aborted by an error before stopping.
    pub stop_reason: Option<StopReason>,
    pub steps: usize,
    pub z_at_stop: Option<f64>,
    /// Retrieved step indices, most relevant first.
    pub retrieved: Vec<usize>,
    pub answer: String,
    pub grade: Grade,
    pub error: Option<EpisodeError>,
}

impl EpisodeResult {
    pub fn failed(steps: usize, err: Error) -> Self {
        let kind = match err.exit_code() {
            1 => FailureKind::Validation,
            2 => FailureKind::Oracle,
            _ => FailureKind::Internal,
        };
        Self {
            stop_reason: None,
            steps,
            z_at_stop: None,
            retrieved: Vec::new(),
            answer: String::new(),
            grade: super::failed_grade(),
            error: Some(EpisodeError {
                kind,
                message: err.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub result: EpisodeResult,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Step(StepRecord),
    Result(EpisodeResult),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LineRef<'a> {
    Header(&'a LogHeader),
    Step(&'a StepRecord),
    Result(&'a EpisodeResult),
}

pub fn write_log(log: &EpisodeLog) -> String {
    let mut out = String::new();
    let mut push = |line: LineRef<'_>| {
        out.push_str(&serde_json::to_string(&line).expect("log lines serialize"));
        out.push('\n');
    };
    push(LineRef::Header(&log.header));
    for s in &log.steps {
        push(LineRef::Step(s));
    }
    push(LineRef::Result(&log.result));
    out
}

/// Parses log text. `path` is only used in error messages.
pub fn parse_log(text: &str, path: &Path) -> Result<EpisodeLog> {
    let err = |line: usize, reason: String| Error::Log {
        path: path.to_owned(),
        line,
        reason,
    };
    let mut header = None;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut result = None;
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        last = n;
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw).map_err(|e| err(n, e.to_string()))?;
        if result.is_some() {
            return Err(err(n, "content after the result line".into()));
        }
        match line {
            Line::Header(h) if header.is_none() && steps.is_empty() => header = Some(h),
            Line::Header(_) => return Err(err(n, "unexpected header line".into())),
            Line::Step(_) if header.is_none() => return Err(err(n, "step before header".into())),
            Line::Step(s) => {
                if s.step != steps.len() + 1 {
                    return Err(err(n, format!("expected step {}, found {}", steps.len() + 1, s.step)));
                }
                steps.push(s);
            }
            Line::Result(_) if header.is_none() => return Err(err(n, "result before header".into())),
            Line::Result(r) => result = Some(r),
        }
    }
    let header = header.ok_or_else(|| err(1, "missing header line".into()))?;
    let result = result.ok_or_else(|| err(last.max(1), "missing result line".into()))?;
    if steps.is_empty() && result.error.is_none() {
        return Err(err(last, "log has no steps".into()));
    }
    Ok(EpisodeLog { header, steps, result })
}

pub fn read_log(path: &Path) -> Result<EpisodeLog> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_log(&text, path)
}

const SPARKS: [char; 8] = ['▁', '▂', '▃', '▄', '▅', '▆', '▇', '█'];

pub fn sparkline(values: &[f64]) -> String {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if hi > lo {
                let level = ((v - lo) / (hi - lo) * (SPARKS.len() - 1) as f64).round() as usize;
                SPARKS[level.min(SPARKS.len() - 1)]
            } else {
                SPARKS[0]
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.digits$}"))
}

/// Text rendering of a log: the map after each step, the candidates and
/// their confidences, the relevancy trace and the final answer.
pub fn render_transcript(log: &EpisodeLog) -> Result<String> {
    let h = &log.header;
    let bad = |line: usize, reason: String| Error::Log {
        path: Default::default(),
        line,
        reason,
    };
    let mut map = SemanticMap::new(h.width, h.height).map_err(|e| bad(1, e.to_string()))?;
    let mut out = String::new();
    let _ = writeln!(out, "episode {}  config {}  seed {}", h.task_id, h.config_digest, h.seed);
    let _ = writeln!(out, "question: {}", h.question);

    for (i, s) in log.steps.iter().enumerate() {
        let line = i + 2;
        for &c in &s.free {
            map.set_belief(c, Belief::Free).map_err(|e| bad(line, e.to_string()))?;
        }
        for &c in &s.walls {
            map.set_belief(c, Belief::Wall).map_err(|e| bad(line, e.to_string()))?;
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "step {}  pose ({:.2}, {:.2}) facing {:.0} deg",
            s.step,
            s.pose.x,
            s.pose.y,
            s.pose.heading.to_degrees()
        );
        let here = s.pose.cell();
        for (y, row) in map.to_ascii().lines().enumerate() {
            let row: String = row
                .chars()
                .enumerate()
                .map(|(x, ch)| if (x as i32, y as i32) == (here.x, here.y) { '@' } else { ch })
                .collect();
            let _ = writeln!(out, "  {row}");
        }
        if s.candidates.is_empty() {
            let _ = writeln!(out, "candidates: none");
        } else {
            let listed: Vec<String> = s
                .candidates
                .iter()
                .map(|c| {
                    format!(
                        "{} ({},{}) size {} cost {} conf {:.3}",
                        c.label, c.point.x, c.point.y, c.cluster_size, c.path_cost, c.confidence
                    )
                })
                .collect();
            let _ = writeln!(out, "candidates: {}", listed.join(" | "));
        }
        let mut notes = Vec::new();
        if s.uniform_fallback {
            notes.push("uniform confidences");
        }
        if s.equivalence_fallback {
            notes.push("exact-match grouping");
        }
        let chosen = s.chosen.map_or_else(|| "-".to_string(), |c| c.to_string());
        let suffix = if notes.is_empty() {
            String::new()
        } else {
            format!("  ({})", notes.join(", "))
        };
        let _ = writeln!(out, "chosen: {chosen}{suffix}");
        let decision = match s.decision {
            StepDecision::Continue => "continue",
            StepDecision::StopDecisive => "stop (decisive)",
            StepDecision::StopBudget => "stop (budget)",
            StepDecision::StopExhausted => "stop (exhausted)",
        };
        let _ = writeln!(out, "relevancy {:.4}  z {}  {decision}", s.relevancy, fmt_opt(s.z, 2));
    }

    let r = &log.result;
    let _ = writeln!(out);
    let values: Vec<f64> = log.steps.iter().map(|s| s.relevancy).collect();
    let _ = writeln!(out, "relevancy: {}", sparkline(&values));
    match r.stop_reason {
        Some(reason) => {
            let _ = writeln!(out, "stop: {} after {} steps (z {})", reason.as_str(), r.steps, fmt_opt(r.z_at_stop, 2));
        }
        None => {
            let _ = writeln!(out, "stop: aborted after {} steps", r.steps);
        }
    }
    if let Some(e) = &r.error {
        let _ = writeln!(out, "error: {}", e.message);
    }
    let retrieved: Vec<String> = r.retrieved.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(
        out,
        "retrieved steps: {}",
        if retrieved.is_empty() { "-".into() } else { retrieved.join(", ") }
    );
    let _ = writeln!(out, "answer: {}", if r.answer.is_empty() { "-" } else { &r.answer });
    let _ = writeln!(out, "grade: {} ({})", r.grade.sigma, r.grade.rationale);
    Ok(out)
}

/// Reads a log file and renders it. Never writes anything.
pub fn replay(path: &Path) -> Result<String> {
    let log = read_log(path)?;
    render_transcript(&log).map_err(|e| match e {
        Error::Log { line, reason, .. } => Error::Log {
            path: path.to_owned(),
            line,
            reason,
        },
        other => other,
    })
}
