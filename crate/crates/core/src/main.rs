use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eqa_core::engine::{self, EngineConfig, GenParams, SweepAxis};
use eqa_core::scene::{load_task_set, TaskSet};
use eqa_core::{Error, Result};

#[derive(Parser)]
#[command(name = "eqa", version, about = "Deterministic embodied question answering on grid worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that override keys of the config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    z_threshold: Option<f64>,
    #[arg(long)]
    min_steps: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    perception_noise: Option<f64>,
    /// Log decisive frames without stopping on them.
    #[arg(long)]
    no_early_stop: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its log.
    Run {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// Log destination; stdout when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate every task of a task file and write a report.
    Eval {
        /// Directory holding tasks.json, or the task file itself.
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// CSV report; a JSON summary is written next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Directory for per-episode logs.
        #[arg(long)]
        logs: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Repeat an evaluation over values of the stopping threshold or K.
    Sweep {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        /// `z=1,2,3` or `k=1,3,5,10`.
        #[arg(long)]
        axis: SweepAxis,
        /// Table CSV.
        #[arg(long)]
        out: PathBuf,
        /// Per-episode CSV.
        #[arg(long)]
        detail: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate scenes and a task file.
    GenScenes {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = GenParams::default().width)]
        width: usize,
        #[arg(long, default_value_t = GenParams::default().height)]
        height: usize,
        #[arg(long, default_value_t = GenParams::default().rooms)]
        rooms: usize,
        #[arg(long, default_value_t = GenParams::default().objects_per_room)]
        objects_per_room: usize,
    },
    /// Render an episode log as text.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: u64, o: &Overrides) -> Result<EngineConfig> {
    let mut config = match path {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    config.seed = seed;
    if let Some(z) = o.z_threshold {
        config.stop.z_threshold = z;
    }
    if let Some(v) = o.min_steps {
        config.stop.min_steps = v;
    }
    if let Some(v) = o.max_steps {
        config.stop.max_steps = v;
    }
    if let Some(v) = o.k {
        config.k = v;
    }
    if let Some(v) = o.m {
        config.m = v;
    }
    if let Some(v) = o.perception_noise {
        config.oracles.scripted.perception_noise = v;
    }
    if o.no_early_stop {
        config.early_stop = false;
    }
    config.validate()?;
    Ok(config)
}

fn tasks_at(path: &Path) -> Result<TaskSet> {
    let file = if path.is_dir() { path.join("tasks.json") } else { path.to_owned() };
    Ok(load_task_set(&file)?)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run {
            scene,
            task,
            config,
            seed,
            log,
            overrides,
        } => {
            let config = load_config(config.as_deref(), seed, &overrides)?;
            let (task, scene) = engine::load_single_task(&scene, &task)?;
            let episode = engine::run_episode(&task, &scene, &config)?;
            let text = engine::write_log(&episode);
            match &log {
                Some(path) => write(path, &text)?,
                None => print!("{text}"),
            }
            let r = &episode.result;
            if let Some(e) = &r.error {
                eprintln!("error: {}", e.message);
                return Ok(e.kind.exit_code());
            }
            eprintln!(
                "{}: {} after {} steps, answer '{}', sigma {}",
                task.id,
                r.stop_reason.map_or("aborted", |s| s.as_str()),
                r.steps,
                r.answer,
                r.grade.sigma
            );
            Ok(0)
        }
        Command::Eval {
            tasks,
            config,
            seed,
            out,
            parallelism,
            logs,
            overrides,
        } => {
            let config = load_config(config.as_deref(), seed, &overrides)?;
            let set = tasks_at(&tasks)?;
            let report = engine::run_batch(&set, &config, parallelism)?;
            write(&out, &report.csv())?;
            write(&out.with_extension("json"), &report.summary_json())?;
            if let Some(dir) = logs {
                for log in &report.logs {
                    write(&dir.join(format!("{}.jsonl", log.header.task_id)), &engine::write_log(log))?;
                }
            }
            let s = &report.summary;
            if s.failed_episodes > 0 {
                eprintln!("warning: {} episode(s) failed and were scored sigma 1", s.failed_episodes);
            }
            eprintln!("n {}  avg steps {:.2}  LLM-Match {:.2}", s.n, s.avg_steps, s.llm_match);
            Ok(0)
        }
        Command::Sweep {
            tasks,
            config,
            seed,
            axis,
            out,
            detail,
            parallelism,
            overrides,
        } => {
            let config = load_config(config.as_deref(), seed, &overrides)?;
            let set = tasks_at(&tasks)?;
            let result = engine::sweep(&set, &config, &axis, parallelism)?;
            write(&out, &result.table_csv())?;
            if let Some(path) = detail {
                write(&path, &result.detail_csv())?;
            }
            print!("{}", result.table_csv());
            Ok(0)
        }
        Command::GenScenes {
            count,
            seed,
            out,
            width,
            height,
            rooms,
            objects_per_room,
        } => {
            let params = GenParams {
                width,
                height,
                rooms,
                objects_per_room,
            };
            let generated = engine::gen_scenes(count, seed, &params)?;
            engine::write_generated(&out, &generated)?;
            eprintln!("wrote {count} scene(s) and tasks.json to {}", out.display());
            Ok(0)
        }
        Command::Replay { log } => {
            print!("{}", engine::replay(&log)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage mistakes are validation errors; help and version are not errors
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
