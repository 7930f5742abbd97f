//! Running relevancy statistics and the outlier test that ends exploration.
//!
//! A frame is answer-decisive when its relevancy sits more than `z_threshold`
//! sample standard deviations above the sample mean of every earlier frame.
//! The candidate's own score is judged against history first and folded in
//! afterwards.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seeding::derive_seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StoppingError {
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("need at least two earlier values with non-zero spread")]
    InsufficientStatistics,
    #[error("invalid stop policy: {0}")]
    InvalidPolicy(&'static str),
}

/// Welford accumulator over relevancy values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StoppingStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub last_z: Option<f64>,
}

impl StoppingStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, value: f64) -> Result<(), StoppingError> {
        if !value.is_finite() {
            return Err(StoppingError::NonFinite(value));
        }
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
        if self.m2 < 0.0 {
            self.m2 = 0.0;
        }
        Ok(())
    }

    /// Sample standard deviation (n − 1 denominator), defined from two values.
    pub fn std_dev(&self) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2 / (self.count - 1) as f64).sqrt())
    }

    /// `(value − mean) / std` against the values seen so far.
    pub fn z_score(&self, value: f64) -> Result<f64, StoppingError> {
        match self.std_dev() {
            Some(sd) if sd > 0.0 => Ok((value - self.mean) / sd),
            _ => Err(StoppingError::InsufficientStatistics),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopPolicy {
    pub z_threshold: f64,
    pub min_steps: usize,
    pub max_steps: usize,
}

impl Default for StopPolicy {
    fn default() -> Self {
        Self {
            z_threshold: 3.0,
            min_steps: 10,
            max_steps: 50,
        }
    }
}

impl StopPolicy {
    pub fn validate(&self) -> Result<(), StoppingError> {
        if self.z_threshold.is_nan() || self.z_threshold <= 0.0 {
            return Err(StoppingError::InvalidPolicy("z_threshold must be positive"));
        }
        if self.min_steps < 2 || self.min_steps > self.max_steps {
            return Err(StoppingError::InvalidPolicy("need 2 <= min_steps <= max_steps"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    StopDecisive,
    StopBudget,
}

impl StopDecision {
    pub fn is_stop(self) -> bool {
        self != StopDecision::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopOutcome {
    pub decision: StopDecision,
    /// Only computed from `min_steps` on, and only when history allows.
    pub z: Option<f64>,
}

/// Judges `value` observed at 1-based `step`, then folds it into `stats`.
pub fn should_stop(stats: &mut StoppingStats, value: f64, policy: &StopPolicy, step: usize) -> Result<StopOutcome, StoppingError> {
    if !value.is_finite() {
        return Err(StoppingError::NonFinite(value));
    }
    let z = if step >= policy.min_steps { stats.z_score(value).ok() } else { None };
    stats.last_z = z;
    let decision = match z {
        Some(z) if z > policy.z_threshold => StopDecision::StopDecisive,
        _ if step >= policy.max_steps => StopDecision::StopBudget,
        _ => StopDecision::Continue,
    };
    stats.update(value)?;
    Ok(StopOutcome { decision, z })
}

/// Where the decision rule gets its mean and spread from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Calibration {
    /// True parameters are supplied; nothing is estimated.
    Known { mean: f64, std: f64 },
    /// Running sample statistics, as in an episode.
    Estimated,
}

/// Monte Carlo false-alarm rate: the fraction of decision points
/// (`min_steps..=stream_len` of each of `trials` pure-noise streams) at which
/// the rule says decisive. Every point is judged, including those after an
/// earlier false alarm in the same stream.
pub fn false_stop_rate(policy: &StopPolicy, calibration: Calibration, stream_len: usize, trials: usize, seed: u64) -> f64 {
    let (mean, std) = match calibration {
        Calibration::Known { mean, std } => (mean, std),
        Calibration::Estimated => (0.2, 0.02),
    };
    let points_per_trial = stream_len.saturating_sub(policy.min_steps.max(1) - 1);
    if points_per_trial == 0 || trials == 0 {
        return 0.0;
    }
    let alarms: u64 = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "false-stop", trial as u64));
            let mut stats = StoppingStats::new();
            let mut alarms = 0u64;
            for step in 1..=stream_len {
                let x: f64 = mean + std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                if step >= policy.min_steps {
                    let z = match calibration {
                        Calibration::Known { mean, std } => Some((x - mean) / std),
                        Calibration::Estimated => stats.z_score(x).ok(),
                    };
                    if z.is_some_and(|z| z > policy.z_threshold) {
                        alarms += 1;
                    }
                }
                stats.update(x).expect("gaussian draws are finite");
            }
            alarms
        })
        .sum();
    alarms as f64 / (trials * points_per_trial) as f64
}
