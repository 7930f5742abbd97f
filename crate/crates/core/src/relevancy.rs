//! Image-question relevancy behind the [`RelevancyScorer`] interface.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::oracle::{OracleError, RelevancyScorer};
use crate::scene::{Observation, QuestionTask};
use crate::seeding::rng_for;

#[derive(Debug, thiserror::Error)]
pub enum RelevancyError {
    #[error("base_std must be positive and finite, got {0}")]
    BaseStd(f64),
    #[error("partial_exponent must be at least 1, got {0}")]
    Exponent(f64),
    #[error("scorer returned non-finite value {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevancyScore {
    pub step: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticScorerConfig {
    pub base_mean: f64,
    pub base_std: f64,
    pub target_boost: f64,
    pub partial_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticScorerConfig {
    fn default() -> Self {
        Self {
            base_mean: 0.20,
            base_std: 0.02,
            target_boost: 0.60,
            partial_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticScorerConfig {
    pub fn validate(&self) -> Result<(), RelevancyError> {
        if !(self.base_std > 0.0 && self.base_std.is_finite()) {
            return Err(RelevancyError::BaseStd(self.base_std));
        }
        if self.partial_exponent.is_nan() || self.partial_exponent < 1.0 {
            return Err(RelevancyError::Exponent(self.partial_exponent));
        }
        Ok(())
    }
}

/// Background Gaussian noise plus a boost for visible targets:
/// `max(0, N(mean, std²)) + boost · f^exponent`, where `f` is the largest
/// visible fraction over the task's target objects. The noise draw depends
/// only on the seed and the observation step.
#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    config: SyntheticScorerConfig,
    noise: Normal<f64>,
}

impl SyntheticScorer {
    pub fn new(config: SyntheticScorerConfig) -> Result<Self, RelevancyError> {
        config.validate()?;
        let noise = Normal::new(config.base_mean, config.base_std).map_err(|_| RelevancyError::BaseStd(config.base_std))?;
        Ok(Self { config, noise })
    }

    pub fn config(&self) -> &SyntheticScorerConfig {
        &self.config
    }

    pub fn background(&self, step: usize) -> f64 {
        self.noise.sample(&mut rng_for(self.config.seed, "relevancy", step as u64)).max(0.0)
    }

    pub fn boost(&self, fraction: f64) -> f64 {
        self.config.target_boost * fraction.clamp(0.0, 1.0).powf(self.config.partial_exponent)
    }
}

/// Largest visible fraction over the task's targets, 0 when none is in view.
pub fn target_fraction(obs: &Observation, task: &QuestionTask) -> f64 {
    task.targets
        .iter()
        .filter_map(|t| obs.visible_object_fractions.get(t))
        .fold(0.0, |a, &b| f64::max(a, b))
}

impl RelevancyScorer for SyntheticScorer {
    fn score(&self, obs: &Observation, _question: &str, task: &QuestionTask) -> Result<f64, OracleError> {
        Ok(self.background(obs.step) + self.boost(target_fraction(obs, task)))
    }
}

/// Scores one observation, retrying scorer failures up to `retries` times.
pub fn score(
    scorer: &dyn RelevancyScorer,
    obs: &Observation,
    question: &str,
    task: &QuestionTask,
    retries: u32,
) -> Result<RelevancyScore, RelevancyError> {
    let mut attempt = 0;
    loop {
        match scorer.score(obs, question, task) {
            Ok(v) if v.is_finite() => return Ok(RelevancyScore { step: obs.step, value: v }),
            Ok(v) => return Err(RelevancyError::NonFinite(v)),
            Err(_) if attempt < retries => attempt += 1,
            Err(e) => return Err(e.into()),
        }
    }
}
