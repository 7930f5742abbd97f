use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::log::{EpisodeLog, EpisodeResult, LogHeader};
use super::{run_episode, EngineConfig};
use crate::answering::{self, sigma_to_percent};
use crate::scene::TaskSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task_id: String,
    pub steps: usize,
    pub stop_reason: String,
    pub z_at_stop: Option<f64>,
    pub sigma: u8,
    /// `(sigma - 1) / 4 * 100 / n`; the column sums to LLM-Match.
    pub llm_match_contrib: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n: usize,
    pub avg_steps: f64,
    pub llm_match: f64,
    pub config_digest: String,
    /// Episodes that ended in an error. They count towards `n` with sigma 1.
    pub failed_episodes: usize,
    pub failed_episode_sigma: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub logs: Vec<EpisodeLog>,
    pub rows: Vec<ReportRow>,
    pub summary: ReportSummary,
}

pub const REPORT_COLUMNS: &str = "task_id,steps,stop_reason,z_at_stop,sigma,llm_match_contrib";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

impl ReportRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6}",
            csv_field(&self.task_id),
            self.steps,
            self.stop_reason,
            self.z_at_stop.map_or_else(String::new, |z| format!("{z:.6}")),
            self.sigma,
            self.llm_match_contrib
        )
    }
}

impl BatchReport {
    pub fn csv(&self) -> String {
        let mut out = format!("{REPORT_COLUMNS}\n");
        for r in &self.rows {
            out.push_str(&r.csv());
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Runs every task of `set` on a pool of `parallelism` threads. Output order
/// follows task order whatever the thread count. An episode that fails is
/// recorded and scored sigma = 1; the batch carries on.
pub fn run_batch(set: &TaskSet, config: &EngineConfig, parallelism: usize) -> Result<BatchReport> {
    config.validate()?;
    if set.tasks.is_empty() {
        return Err(Error::Config("task list is empty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let logs: Vec<EpisodeLog> = pool.install(|| {
        set.tasks
            .par_iter()
            .map(|task| {
                let scene = set.scene_for(task);
                run_episode(task, scene, config).unwrap_or_else(|err| EpisodeLog {
                    header: LogHeader {
                        config_digest: config.digest(),
                        task_id: task.id.clone(),
                        question: task.question.clone(),
                        width: scene.width(),
                        height: scene.height(),
                        seed: config.seed,
                        k: config.k,
                    },
                    steps: Vec::new(),
                    result: EpisodeResult::failed(0, err),
                })
            })
            .collect()
    });
    Ok(summarize(logs, config))
}

fn summarize(logs: Vec<EpisodeLog>, config: &EngineConfig) -> BatchReport {
    let n = logs.len();
    let rows: Vec<ReportRow> = logs
        .iter()
        .map(|log| {
            let r = &log.result;
            ReportRow {
                task_id: log.header.task_id.clone(),
                steps: r.steps,
                stop_reason: r.stop_reason.map_or("aborted", |s| s.as_str()).to_owned(),
                z_at_stop: r.z_at_stop,
                sigma: r.grade.sigma,
                llm_match_contrib: sigma_to_percent(r.grade.sigma) / n as f64,
            }
        })
        .collect();
    let grades: Vec<_> = logs.iter().map(|l| l.result.grade.clone()).collect();
    let steps: Vec<usize> = logs.iter().map(|l| l.result.steps).collect();
    let summary = ReportSummary {
        n,
        avg_steps: answering::average_steps(&steps).expect("non-empty batch"),
        llm_match: answering::llm_match(&grades).expect("non-empty batch"),
        config_digest: config.digest(),
        failed_episodes: logs.iter().filter(|l| l.result.error.is_some()).count(),
        failed_episode_sigma: 1,
    };
    BatchReport { logs, rows, summary }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    ZThreshold(Vec<f64>),
    K(Vec<usize>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::ZThreshold(_) => "z_threshold",
            SweepAxis::K(_) => "k",
        }
    }

    fn len(&self) -> usize {
        match self {
            SweepAxis::ZThreshold(v) => v.len(),
            SweepAxis::K(v) => v.len(),
        }
    }

    fn apply(&self, i: usize, base: &EngineConfig) -> (String, EngineConfig) {
        let mut config = base.clone();
        let label = match self {
            SweepAxis::ZThreshold(v) => {
                config.stop.z_threshold = v[i];
                v[i].to_string()
            }
            SweepAxis::K(v) => {
                config.k = v[i];
                v[i].to_string()
            }
        };
        (label, config)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    /// `z=1,2,3` or `k=1,3,5,10`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("axis must look like z=1,2,3 or k=1,3,5,10, got '{s}'"));
        let (name, values) = s.split_once('=').ok_or_else(bad)?;
        let values: Vec<&str> = values.split(',').map(str::trim).collect();
        match name.trim() {
            "z" | "z_threshold" => values
                .iter()
                .map(|v| v.parse::<f64>().ok().filter(|z| z.is_finite() && *z > 0.0))
                .collect::<Option<Vec<_>>>()
                .map(SweepAxis::ZThreshold)
                .ok_or_else(bad),
            "k" => values
                .iter()
                .map(|v| v.parse::<usize>().ok().filter(|&k| k > 0))
                .collect::<Option<Vec<_>>>()
                .map(SweepAxis::K)
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub report: BatchReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// The ablation table: average steps and LLM-Match per threshold, or
    /// LLM-Match per retrieval count.
    pub fn table_csv(&self) -> String {
        let mut out = String::new();
        match self.axis {
            SweepAxis::ZThreshold(_) => {
                out.push_str("z_threshold,avg_steps,llm_match\n");
                for r in &self.rows {
                    let s = &r.report.summary;
                    let _ = writeln!(out, "{},{:.2},{:.2}", r.value, s.avg_steps, s.llm_match);
                }
            }
            SweepAxis::K(_) => {
                out.push_str("k,llm_match\n");
                for r in &self.rows {
                    let _ = writeln!(out, "{},{:.2}", r.value, r.report.summary.llm_match);
                }
            }
        }
        out
    }

    /// Per-episode rows in the report schema, prefixed with the axis value.
    pub fn detail_csv(&self) -> String {
        let mut out = format!("{},{REPORT_COLUMNS}\n", self.axis.name());
        for r in &self.rows {
            for row in &r.report.rows {
                let _ = writeln!(out, "{},{}", r.value, row.csv());
            }
        }
        out
    }
}

/// One batch per axis value, all with the same seed and tasks.
pub fn sweep(set: &TaskSet, config: &EngineConfig, axis: &SweepAxis, parallelism: usize) -> Result<SweepResult> {
    if axis.len() == 0 {
        return Err(Error::Config("sweep axis has no values".into()));
    }
    let rows = (0..axis.len())
        .map(|i| {
            let (value, config) = axis.apply(i, config);
            run_batch(set, &config, parallelism).map(|report| SweepRow { value, report })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { axis: axis.clone(), rows })
}
