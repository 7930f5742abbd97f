use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{normalize_text, AnswerOracle, DirectionOracle, DirectionQuery, GraderOracle, OracleError, RawSample};
use crate::answering::{AnswerQuery, Grade};
use crate::scene::{Coord, QuestionTask, SceneGrid};
use crate::seeding::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptedOracleConfig {
    /// Probability that a direction sample is a uniform guess.
    pub perception_noise: f64,
    pub seed: u64,
    /// Token rewrites applied by the scripted grader, e.g. `"four" -> "4"`.
    pub synonym_table: BTreeMap<String, String>,
}

impl Default for ScriptedOracleConfig {
    fn default() -> Self {
        Self {
            perception_noise: 0.0,
            seed: 0,
            synonym_table: default_synonyms(),
        }
    }
}

fn default_synonyms() -> BTreeMap<String, String> {
    ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"]
        .iter()
        .enumerate()
        .map(|(i, w)| (w.to_string(), i.to_string()))
        .collect()
}

impl ScriptedOracleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.perception_noise) {
            return Err(format!("perception_noise {} outside [0, 1]", self.perception_noise));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Informed,
    Noise,
}

/// Direction model that knows, up to tunable noise, where the targets are.
///
/// Informed samples name the candidate with the shortest ground-truth path to
/// a target nobody has seen yet (any target once all are seen), with raw
/// confidence `0.5 + 0.5 * (1 - best / runner_up)`. Noise samples name a
/// uniform candidate with confidence uniform in `[0.1, 0.9]`.
#[derive(Debug, Clone)]
pub struct ScriptedDirectionOracle {
    config: ScriptedOracleConfig,
    width: usize,
    /// Per target: its cells and the BFS distance field to them.
    targets: Vec<(Vec<Coord>, Vec<Option<u32>>)>,
}

impl ScriptedDirectionOracle {
    pub fn new(config: ScriptedOracleConfig, scene: &SceneGrid, task: &QuestionTask) -> Self {
        let targets = task
            .targets
            .iter()
            .filter_map(|id| scene.object_index(id))
            .map(|idx| {
                let cells = scene.objects()[idx].cells.clone();
                let field = distance_field(scene, &cells);
                (cells, field)
            })
            .collect();
        Self {
            config,
            width: scene.width(),
            targets,
        }
    }

    fn informed_choice(&self, query: &DirectionQuery<'_>) -> Option<(usize, f64)> {
        let undiscovered: Vec<_> = self
            .targets
            .iter()
            .filter(|(cells, _)| !cells.iter().any(|&c| query.map.is_explored(c)))
            .collect();
        let pool: Vec<_> = if undiscovered.is_empty() {
            self.targets.iter().collect()
        } else {
            undiscovered
        };
        let dist: Vec<Option<u32>> = query
            .candidates
            .iter()
            .map(|cand| {
                let i = cand.point.y as usize * self.width + cand.point.x as usize;
                pool.iter().filter_map(|(_, field)| field.get(i).copied().flatten()).min()
            })
            .collect();
        let (best, best_d) = dist
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|d| (i, d)))
            .min_by_key(|&(i, d)| (d, i))?;
        let runner_up = dist.iter().enumerate().filter(|&(i, _)| i != best).filter_map(|(_, d)| *d).min();
        let ratio = match runner_up {
            None => 1.0,
            Some(0) => 0.0,
            Some(r) => 1.0 - best_d as f64 / r as f64,
        };
        Some((best, 0.5 + 0.5 * ratio))
    }

    /// Samples together with how each was produced.
    pub fn draw(&self, query: &DirectionQuery<'_>) -> Vec<(RawSample, SampleKind)> {
        if query.candidates.is_empty() {
            return Vec::new();
        }
        let mut rng = rng_for(self.config.seed, "direction", query.step as u64);
        let informed = self.informed_choice(query);
        (0..query.m)
            .map(|_| {
                let noisy = rng.gen_bool(self.config.perception_noise.clamp(0.0, 1.0));
                match informed {
                    Some((idx, conf)) if !noisy => (RawSample::new(query.candidates[idx].label, conf), SampleKind::Informed),
                    _ => {
                        let idx = rng.gen_range(0..query.candidates.len());
                        let conf = rng.gen_range(0.1..=0.9);
                        (RawSample::new(query.candidates[idx].label, conf), SampleKind::Noise)
                    }
                }
            })
            .collect()
    }
}

impl DirectionOracle for ScriptedDirectionOracle {
    fn sample_directions(&self, query: &DirectionQuery<'_>) -> Result<Vec<RawSample>, OracleError> {
        Ok(self.draw(query).into_iter().map(|(s, _)| s).collect())
    }
}

fn distance_field(scene: &SceneGrid, sources: &[Coord]) -> Vec<Option<u32>> {
    let mut field = vec![None; scene.width() * scene.height()];
    let idx = |c: Coord| c.y as usize * scene.width() + c.x as usize;
    let mut queue = VecDeque::new();
    for &s in sources {
        if scene.is_free(s) && field[idx(s)].is_none() {
            field[idx(s)] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(c) = queue.pop_front() {
        let d = field[idx(c)].expect("queued cells have a distance");
        for n in c.neighbors4() {
            if scene.is_free(n) && field[idx(n)].is_none() {
                field[idx(n)] = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    field
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerPhrasing {
    /// Just the attribute value, e.g. `on`.
    #[default]
    Bare,
    /// `the <label> is <value>`.
    Sentence,
}

/// Reads the answer off the retrieved frame digests: finds the object whose
/// label the question mentions, then the attribute whose key the question
/// mentions. Answers `unknown` when the frames do not show it.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedAnswerOracle {
    pub phrasing: AnswerPhrasing,
}

pub const UNKNOWN_ANSWER: &str = "unknown";

impl AnswerOracle for ScriptedAnswerOracle {
    fn answer(&self, query: &AnswerQuery) -> Result<String, OracleError> {
        let question = normalize_text(&query.question);
        let padded = format!(" {question} ");
        let q_tokens: Vec<&str> = question.split_whitespace().collect();

        let mut best: Option<(usize, &crate::answering::ObjectView)> = None;
        for frame in &query.frames {
            for obj in &frame.digest.objects {
                let label = normalize_text(&obj.label);
                if label.is_empty() || !padded.contains(&format!(" {label} ")) {
                    continue;
                }
                if best.is_none_or(|(len, _)| label.len() > len) {
                    best = Some((label.len(), obj));
                }
            }
        }
        let Some((_, obj)) = best else {
            return Ok(UNKNOWN_ANSWER.into());
        };

        let mut chosen: Option<(usize, &String, &String)> = None;
        for (key, value) in &obj.attributes {
            let hits = key
                .split('_')
                .filter(|kt| !kt.is_empty() && q_tokens.iter().any(|qt| qt.starts_with(kt)))
                .count();
            if hits > 0 && chosen.is_none_or(|(h, _, _)| hits > h) {
                chosen = Some((hits, key, value));
            }
        }
        let value = match chosen {
            Some((_, _, v)) => v,
            None if obj.attributes.len() == 1 => obj.attributes.values().next().expect("one attribute"),
            None => return Ok(UNKNOWN_ANSWER.into()),
        };
        Ok(match self.phrasing {
            AnswerPhrasing::Bare => value.clone(),
            AnswerPhrasing::Sentence => format!("the {} is {value}", obj.label),
        })
    }
}

/// Rubric: 5 for equal normalized text, 4 when every reference token appears
/// in the prediction, 1 otherwise. Synonyms are applied token by token first.
#[derive(Debug, Clone, Default)]
pub struct ScriptedGrader {
    pub synonyms: BTreeMap<String, String>,
}

impl ScriptedGrader {
    pub fn new(synonyms: BTreeMap<String, String>) -> Self {
        Self { synonyms }
    }

    fn tokens(&self, s: &str) -> Vec<String> {
        normalize_text(s)
            .split_whitespace()
            .map(|t| self.synonyms.get(t).cloned().unwrap_or_else(|| t.to_owned()))
            .collect()
    }
}

impl GraderOracle for ScriptedGrader {
    fn grade(&self, _question: &str, prediction: &str, truth: &str) -> Result<Grade, OracleError> {
        let p = self.tokens(prediction);
        let t = self.tokens(truth);
        let (sigma, rationale) = if p == t {
            (5, "exact match")
        } else if !t.is_empty() && t.iter().all(|tok| p.contains(tok)) {
            (4, "prediction contains every reference token")
        } else {
            (1, "no match")
        };
        Ok(Grade {
            sigma,
            rationale: rationale.into(),
            flagged: false,
        })
    }
}
