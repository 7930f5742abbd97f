//! The per-episode control loop, its configuration, batch evaluation,
//! ablation sweeps, scene generation and log replay.

mod batch;
mod generate;
mod log;

pub use batch::{run_batch, sweep, BatchReport, ReportRow, ReportSummary, SweepAxis, SweepResult, SweepRow};
pub use generate::{gen_scenes, write_generated, GenParams, GeneratedTask};
pub use log::{
    read_log, render_transcript, replay, sparkline, write_log, EpisodeError, EpisodeLog, EpisodeResult, FailureKind, LogHeader, StepDecision,
    StepRecord, StopReason,
};

use std::env;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::answering::{self, FrameDigest, Grade, HistoryFrame};
use crate::confidence::{self, ConfidenceSample};
use crate::exploration::{self, FusionWeights};
use crate::mapping::SemanticMap;
use crate::oracle::{
    AnswerOracle, AnswerPhrasing, DirectionOracle, DirectionQuery, EquivalenceOracle, ExactMatchEquivalence, GraderOracle, RelevancyScorer,
    RemoteAnswerOracle, RemoteClient, RemoteDirectionOracle, RemoteEquivalenceOracle, RemoteGrader, RemoteScorer, RetryPolicy, ScriptedAnswerOracle,
    ScriptedDirectionOracle, ScriptedGrader, ScriptedOracleConfig, ENDPOINT_ENV,
};
use crate::relevancy::{self, SyntheticScorer, SyntheticScorerConfig};
use crate::scene::{self, Pose, QuestionTask, SceneGrid, SensorConfig, TaskDocument};
use crate::seeding::derive_seed;
use crate::stopping::{should_stop, StopDecision, StopPolicy, StoppingStats};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum OracleBackend {
    #[default]
    Scripted,
    Remote {
        endpoint: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub direction: OracleBackend,
    pub equivalence: OracleBackend,
    pub answer: OracleBackend,
    pub grader: OracleBackend,
    pub scripted: ScriptedOracleConfig,
    pub phrasing: AnswerPhrasing,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ScorerBackend {
    Synthetic(SyntheticScorerConfig),
    Remote { endpoint: String },
}

impl Default for ScorerBackend {
    fn default() -> Self {
        ScorerBackend::Synthetic(SyntheticScorerConfig::default())
    }
}

/// Everything that determines an episode besides the scene and the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: u64,
    pub sensor: SensorConfig,
    pub weights: FusionWeights,
    /// Direction samples elicited per step.
    pub m: usize,
    /// Cells moved per step.
    pub step_budget: usize,
    pub max_candidates: usize,
    pub stop: StopPolicy,
    /// When false, decisive frames are logged but never end the episode.
    pub early_stop: bool,
    pub k: usize,
    /// Extra attempts for an oracle call that fails, on top of any transport
    /// retries the remote client does itself.
    pub oracle_retries: u32,
    pub oracles: OracleConfig,
    pub scorer: ScorerBackend,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sensor: SensorConfig::default(),
            weights: FusionWeights::default(),
            m: 3,
            step_budget: 3,
            max_candidates: 26,
            stop: StopPolicy::default(),
            early_stop: true,
            k: answering::DEFAULT_K,
            oracle_retries: 0,
            oracles: OracleConfig::default(),
            scorer: ScorerBackend::default(),
        }
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.weights.validate()?;
        self.stop.validate()?;
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.step_budget == 0 {
            return Err(Error::Config("step_budget must be at least 1".into()));
        }
        if self.max_candidates == 0 {
            return Err(Error::Config("max_candidates must be at least 1".into()));
        }
        self.oracles.scripted.validate().map_err(Error::Config)?;
        if let ScorerBackend::Synthetic(s) = &self.scorer {
            s.validate()?;
        }
        Ok(())
    }

    /// Short content hash identifying this configuration in logs and reports.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    fn endpoint(&self, configured: &str) -> String {
        env::var(ENDPOINT_ENV)
            .ok()
            .filter(|e| !e.trim().is_empty())
            .unwrap_or_else(|| configured.to_owned())
    }

    fn client(&self, configured: &str) -> Result<RemoteClient> {
        Ok(RemoteClient::new(&self.endpoint(configured), self.oracles.retry)?)
    }

    /// Oracle instances for one episode. Scripted seeds are derived from the
    /// config seed and the task id, so episodes do not depend on each other.
    pub fn build_oracles(&self, scene: &Arc<SceneGrid>, task: &QuestionTask) -> Result<EpisodeOracles> {
        let o = &self.oracles;
        let direction: Box<dyn DirectionOracle> = match &o.direction {
            OracleBackend::Scripted => {
                let config = ScriptedOracleConfig {
                    seed: derive_seed(self.seed, &format!("direction/{}", task.id), o.scripted.seed),
                    ..o.scripted.clone()
                };
                Box::new(ScriptedDirectionOracle::new(config, scene, task))
            }
            OracleBackend::Remote { endpoint } => Box::new(RemoteDirectionOracle(self.client(endpoint)?)),
        };
        let equivalence: Box<dyn EquivalenceOracle> = match &o.equivalence {
            OracleBackend::Scripted => Box::new(ExactMatchEquivalence),
            OracleBackend::Remote { endpoint } => Box::new(RemoteEquivalenceOracle(self.client(endpoint)?)),
        };
        let answer: Box<dyn AnswerOracle> = match &o.answer {
            OracleBackend::Scripted => Box::new(ScriptedAnswerOracle { phrasing: o.phrasing }),
            OracleBackend::Remote { endpoint } => Box::new(RemoteAnswerOracle(self.client(endpoint)?)),
        };
        let grader: Box<dyn GraderOracle> = match &o.grader {
            OracleBackend::Scripted => Box::new(ScriptedGrader::new(o.scripted.synonym_table.clone())),
            OracleBackend::Remote { endpoint } => Box::new(RemoteGrader(self.client(endpoint)?)),
        };
        let scorer: Box<dyn RelevancyScorer> = match &self.scorer {
            ScorerBackend::Synthetic(s) => Box::new(SyntheticScorer::new(SyntheticScorerConfig {
                seed: derive_seed(self.seed, &format!("relevancy/{}", task.id), s.seed),
                ..*s
            })?),
            ScorerBackend::Remote { endpoint } => Box::new(RemoteScorer {
                client: self.client(endpoint)?,
                scene: Arc::clone(scene),
            }),
        };
        Ok(EpisodeOracles {
            direction,
            equivalence,
            answer,
            grader,
            scorer,
        })
    }
}

pub struct EpisodeOracles {
    pub direction: Box<dyn DirectionOracle>,
    pub equivalence: Box<dyn EquivalenceOracle>,
    pub answer: Box<dyn AnswerOracle>,
    pub grader: Box<dyn GraderOracle>,
    pub scorer: Box<dyn RelevancyScorer>,
}

/// Loads the task for `run`: a single task document, or a list holding
/// exactly one. `scene_path` replaces the document's scene reference.
pub fn load_single_task(scene_path: &Path, task_path: &Path) -> Result<(QuestionTask, Arc<SceneGrid>)> {
    let text = fs::read_to_string(task_path).map_err(|source| Error::Io {
        path: task_path.to_owned(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", task_path.display())))?;
    let doc: TaskDocument = match value {
        serde_json::Value::Array(mut items) if items.len() == 1 => serde_json::from_value(items.remove(0)),
        serde_json::Value::Array(items) => {
            return Err(Error::Config(format!(
                "{}: expected one task, found {}",
                task_path.display(),
                items.len()
            )));
        }
        other => serde_json::from_value(other),
    }
    .map_err(|e| Error::Config(format!("{}: {e}", task_path.display())))?;
    let scene = Arc::new(scene::load_scene(scene_path)?);
    let [x, y, heading] = doc.start;
    let task = QuestionTask {
        id: doc.id.unwrap_or_else(|| "task-000".into()),
        scene: scene_path.to_owned(),
        start: Pose::new(x, y, heading),
        question: doc.question,
        ground_truth: doc.answer,
        targets: doc.targets,
    };
    task.validate_against(&scene)?;
    Ok((task, scene))
}

/// Runs one episode with oracles built from `config`.
///
/// Invalid input is an `Err`. Oracle failures during the episode are not:
/// they end the episode and are recorded in the returned log's result.
pub fn run_episode(task: &QuestionTask, scene: &Arc<SceneGrid>, config: &EngineConfig) -> Result<EpisodeLog> {
    config.validate()?;
    task.validate_against(scene)?;
    let oracles = config.build_oracles(scene, task)?;
    run_episode_with(task, scene, config, &oracles)
}

pub fn run_episode_with(task: &QuestionTask, scene: &SceneGrid, config: &EngineConfig, oracles: &EpisodeOracles) -> Result<EpisodeLog> {
    config.validate()?;
    task.validate_against(scene)?;
    let header = LogHeader {
        config_digest: config.digest(),
        task_id: task.id.clone(),
        question: task.question.clone(),
        width: scene.width(),
        height: scene.height(),
        seed: config.seed,
        k: config.k,
    };
    let mut steps = Vec::new();
    let explored = explore(task, scene, config, oracles, &mut steps);
    let result = match explored {
        Ok((reason, z_at_stop)) => finish(task, config, oracles, &steps, reason, z_at_stop),
        Err(err) => EpisodeResult::failed(steps.len(), err),
    };
    Ok(EpisodeLog { header, steps, result })
}

fn explore(
    task: &QuestionTask,
    scene: &SceneGrid,
    config: &EngineConfig,
    oracles: &EpisodeOracles,
    steps: &mut Vec<StepRecord>,
) -> Result<(StopReason, Option<f64>)> {
    let mut map = SemanticMap::new(scene.width(), scene.height())?;
    let mut pose = task.start;
    let mut stats = StoppingStats::new();
    let mut step = 0;
    loop {
        step += 1;
        let obs = scene::sense(scene, &pose, &config.sensor, step)?;
        map.integrate(&obs, None)?;

        let mut candidates = exploration::propose_candidates(&map, &pose, config.max_candidates);
        let mut samples: Vec<ConfidenceSample> = Vec::new();
        let (mut uniform_fallback, mut equivalence_fallback) = (false, false);
        let mut chosen = None;
        let mut next_pose = None;
        if !candidates.is_empty() {
            let query = DirectionQuery {
                question: &task.question,
                candidates: &candidates,
                map: &map,
                step,
                m: config.m,
            };
            let raw = confidence::elicit(oracles.direction.as_ref(), &query, config.oracle_retries)?;
            let (normalized, uniform) = confidence::normalize_or_uniform(&raw)?;
            let (per_label, fell_back) = confidence::direction_confidences(&normalized, &candidates, oracles.equivalence.as_ref())?;
            for c in &mut candidates {
                c.confidence = per_label[&c.label];
            }
            map.fuse_semantic(&exploration::direction_values(&map, &candidates))?;
            samples = normalized;
            uniform_fallback = uniform;
            equivalence_fallback = fell_back;

            let mut pool = candidates.clone();
            while !pool.is_empty() {
                let i = exploration::select_next(&pool, &config.weights, map.diagonal())?;
                match exploration::plan_step(&map, &pose, pool[i].point, config.step_budget) {
                    Some(p) => {
                        chosen = Some(pool[i].label);
                        next_pose = Some(p);
                        break;
                    }
                    None => {
                        pool.remove(i);
                    }
                }
            }
        }

        let rel = relevancy::score(oracles.scorer.as_ref(), &obs, &task.question, task, config.oracle_retries)?;
        let outcome = should_stop(&mut stats, rel.value, &config.stop, step)?;
        let decision = match outcome.decision {
            StopDecision::StopDecisive if !config.early_stop => {
                if step >= config.stop.max_steps {
                    StopDecision::StopBudget
                } else {
                    StopDecision::Continue
                }
            }
            d => d,
        };

        let stop = match decision {
            StopDecision::StopDecisive => Some(StopReason::Decisive),
            StopDecision::StopBudget => Some(StopReason::Budget),
            StopDecision::Continue if next_pose.is_none() => Some(StopReason::Exhausted),
            StopDecision::Continue => None,
        };
        let (mut free, mut walls) = (Vec::new(), Vec::new());
        for (c, truth) in &obs.visible_cells {
            match truth.occupancy {
                scene::Occupancy::Free => free.push(*c),
                scene::Occupancy::Wall => walls.push(*c),
            }
        }
        steps.push(StepRecord {
            step,
            pose,
            free,
            walls,
            digest: FrameDigest::capture(&obs, scene),
            candidates,
            samples,
            uniform_fallback,
            equivalence_fallback,
            chosen,
            relevancy: rel.value,
            z: outcome.z,
            decision: match stop {
                Some(StopReason::Exhausted) => StepDecision::StopExhausted,
                _ => decision.into(),
            },
        });

        match (stop, next_pose) {
            (Some(reason), _) => return Ok((reason, outcome.z)),
            (None, Some(p)) => pose = p,
            (None, None) => unreachable!("no next pose means exhausted"),
        }
    }
}

fn finish(
    task: &QuestionTask,
    config: &EngineConfig,
    oracles: &EpisodeOracles,
    steps: &[StepRecord],
    reason: StopReason,
    z_at_stop: Option<f64>,
) -> EpisodeResult {
    match answer_from_steps(&task.question, steps, config.k, oracles.answer.as_ref(), config.oracle_retries) {
        Ok((answer, retrieved)) => {
            let grade = answering::grade(oracles.grader.as_ref(), &task.question, &answer, &task.ground_truth);
            EpisodeResult {
                stop_reason: Some(reason),
                steps: steps.len(),
                z_at_stop,
                retrieved,
                answer,
                grade,
                error: None,
            }
        }
        Err(err) => EpisodeResult {
            stop_reason: Some(reason),
            z_at_stop,
            ..EpisodeResult::failed(steps.len(), err)
        },
    }
}

/// Retrieval and answering from logged steps alone. Returns the answer and
/// the retrieved step indices in rank order.
pub fn answer_from_steps(question: &str, steps: &[StepRecord], k: usize, oracle: &dyn AnswerOracle, retries: u32) -> Result<(String, Vec<usize>)> {
    let history: Vec<HistoryFrame> = steps
        .iter()
        .map(|s| HistoryFrame {
            digest: s.digest.clone(),
            score: relevancy::RelevancyScore {
                step: s.step,
                value: s.relevancy,
            },
        })
        .collect();
    let retrieval = answering::top_k(question, &history, k)?;
    let query = answering::assemble_query(&retrieval);
    let answer = answering::answer(oracle, &query, retries)?;
    Ok((answer, retrieval.frames.iter().map(|f| f.step).collect()))
}

/// Grade given to episodes that produced no answer.
pub fn failed_grade() -> Grade {
    Grade {
        sigma: 1,
        rationale: "no answer produced".into(),
        flagged: true,
    }
}
