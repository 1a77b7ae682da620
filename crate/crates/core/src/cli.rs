//! The `uav-trend` command line.
//!
//! ```text
//! uav-trend train       --out DIR [--config FILE] [--seed N] [--episodes N] [--gu-growth]
//! uav-trend eval        --out DIR --checkpoint FILE [--config FILE] [--seed N]
//! uav-trend inspect-obs --out DIR [--config FILE] [--seed N] [--slots N]
//! ```
//!
//! Every command also takes `--trend-mode` and any number of
//! `--override key=value`. Each output directory gets `manifest.json` and
//! the fully resolved `config.toml`; rerunning with `--config DIR/config.toml`
//! reproduces the artifacts byte for byte.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration,
//! 3 unwritable output directory, 4 checkpoint/grid shape mismatch.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::Serialize;

use crate::config::{RunConfig, TrendMode};
use crate::env::{step, Action};
use crate::error::Error;
use crate::qnet::QNetwork;
use crate::trainer::{evaluate, EpisodeReport, SlotRecord, Trainer};
use crate::world::spawn_world;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_OUTPUT: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;

pub const EPISODE_HEADER: [&str; 8] = [
    "episode",
    "n_gus",
    "total_reward",
    "steps",
    "final_fairness",
    "throughput_bits",
    "energy_used",
    "mean_td_loss",
];

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "t",
    "x_cell",
    "y_cell",
    "action",
    "reward",
    "fairness",
    "throughput_bits",
    "energy",
    "energy_used",
    "served",
];

#[derive(Debug, Parser)]
#[command(
    name = "uav-trend",
    version,
    about = "UAV trajectory planning with trend-aware deep Q-learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write episodes.csv and checkpoint.bin.
    Train(TrainArgs),
    /// Greedy rollout of a checkpoint; writes trajectory.csv and summary.json.
    Eval(EvalArgs),
    /// Random-policy rollout dumping the observation channels per slot.
    InspectObs(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with [scenario] and [train] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed, replaces scenario.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_trend_mode)]
    pub trend_mode: Option<TrendMode>,
    /// `key=value`, `scenario.key=value` or `train.key=value`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Add one ground user per episode.
    #[arg(long)]
    pub gu_growth: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 10)]
    pub slots: usize,
}

fn parse_trend_mode(s: &str) -> Result<TrendMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failed command: process exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, err: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::Config { .. } => EXIT_CONFIG,
            Error::ShapeMismatch(_) => EXIT_SHAPE,
            _ => EXIT_RUNTIME,
        };
        Failure::new(code, err)
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    out_dir: String,
    /// The resolved configuration as TOML (JSON cannot hold infinities).
    config: String,
    artifacts: Vec<String>,
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::InspectObs(args) => cmd_inspect_obs(&args),
    }
}

fn resolve(common: &CommonArgs, extra: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_path(path).map_err(|e| match e {
            Error::Io { .. } => Failure::new(EXIT_CONFIG, e),
            other => other.into(),
        })?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(mode) = common.trend_mode {
        cfg.scenario.trend_mode = mode;
    }
    extra(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn output_failure(path: &Path, err: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_OUTPUT, format!("cannot write to {}: {err}", path.display()))
}

/// Creates the output directory and writes the manifest and resolved config.
fn prepare_out(dir: &Path, command: &str, cfg: &RunConfig, artifacts: &[String]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| output_failure(dir, e))?;
    write_manifest(dir, command, cfg, artifacts)
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, artifacts: &[String]) -> Result<(), Failure> {
    let config = cfg.to_toml_string();
    let config_path = dir.join("config.toml");
    fs::write(&config_path, &config).map_err(|e| output_failure(&config_path, e))?;
    let mut all = vec!["manifest.json".to_string(), "config.toml".to_string()];
    all.extend(artifacts.iter().cloned());
    let manifest = Manifest {
        command,
        seed: cfg.scenario.seed,
        out_dir: dir.display().to_string(),
        config,
        artifacts: all,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| output_failure(&path, e))
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>, Failure> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| output_failure(path, e))?;
    w.write_record(header).map_err(|e| output_failure(path, e))?;
    Ok(w)
}

fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = resolve(&args.common, |c| {
        if let Some(n) = args.episodes {
            c.train.episodes = n;
        }
        if args.gu_growth {
            c.train.gu_growth = true;
        }
    })?;
    let out = &args.common.out;
    let artifacts = ["episodes.csv".to_string(), "checkpoint.bin".to_string()];
    prepare_out(out, "train", &cfg, &artifacts)?;

    let csv_path = out.join("episodes.csv");
    let mut csv = csv_writer(&csv_path, &EPISODE_HEADER)?;
    let mut trainer = Trainer::new(cfg.scenario.clone(), cfg.train.clone())?;
    let mut write_err = None;
    trainer.train_with(|r: &EpisodeReport| {
        let res = csv.serialize(r).and_then(|_| csv.flush().map_err(Into::into));
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(output_failure(&csv_path, e));
    }
    csv.flush().map_err(|e| output_failure(&csv_path, e))?;
    let ckpt = out.join("checkpoint.bin");
    trainer.network().save(&ckpt).map_err(|e| output_failure(&ckpt, e))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Summary {
    seed: u64,
    n_gus: usize,
    steps: usize,
    total_reward: f64,
    total_throughput_bits: f64,
    total_energy: f64,
    final_fairness: f64,
    total_served: usize,
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Failure> {
    let cfg = resolve(&args.common, |_| {})?;
    let net = QNetwork::load(&args.checkpoint)?;
    if net.shape().grid_k != cfg.scenario.grid_k {
        return Err(Failure::new(
            EXIT_SHAPE,
            format!(
                "checkpoint was trained on a {k}x{k} grid but the scenario has grid_k = {}",
                cfg.scenario.grid_k,
                k = net.shape().grid_k
            ),
        ));
    }
    let out = &args.common.out;
    let artifacts = ["trajectory.csv".to_string(), "summary.json".to_string()];
    prepare_out(out, "eval", &cfg, &artifacts)?;

    let n_gus = cfg.train.gus_for(1);
    let (report, trajectory) = evaluate(&net, &cfg.scenario, n_gus)?;
    let path = out.join("trajectory.csv");
    let mut csv = csv_writer(&path, &TRAJECTORY_HEADER)?;
    for r in &trajectory {
        csv.serialize(r).map_err(|e| output_failure(&path, e))?;
    }
    csv.flush().map_err(|e| output_failure(&path, e))?;

    let sum = |f: fn(&SlotRecord) -> f64| trajectory.iter().map(f).sum::<f64>();
    let summary = Summary {
        seed: cfg.scenario.seed,
        n_gus,
        steps: report.steps,
        total_reward: sum(|r| r.reward),
        total_throughput_bits: sum(|r| r.throughput_bits),
        total_energy: sum(|r| r.energy),
        final_fairness: report.final_fairness,
        total_served: trajectory.iter().map(|r| r.served).sum(),
    };
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(|e| output_failure(&path, e))
}

fn write_matrix(path: &Path, m: &ndarray::Array2<f64>) -> Result<(), Failure> {
    let mut f = fs::File::create(path).map_err(|e| output_failure(path, e))?;
    let mut text = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| output_failure(path, e))
}

fn cmd_inspect_obs(args: &InspectArgs) -> Result<(), Failure> {
    let cfg = resolve(&args.common, |_| {})?;
    let out = &args.common.out;
    let names = |t: usize| [1, 2, 3].map(|c| format!("slot_{t:04}_t{c}.csv"));
    let planned: Vec<String> = (0..args.slots).flat_map(names).collect();
    prepare_out(out, "inspect-obs", &cfg, &planned)?;

    let scenario = &cfg.scenario;
    let mut world = spawn_world(scenario, cfg.train.gus_for(1))?;
    let mut written = Vec::new();
    for t in 0..args.slots {
        let obs = world.observe(scenario)?;
        for (name, m) in names(t).into_iter().zip(obs.channels()) {
            write_matrix(&out.join(&name), m)?;
            written.push(name);
        }
        let action = Action::ALL[world.streams.agent.random_range(0..Action::COUNT)];
        if step(&mut world, action, scenario)?.done {
            break;
        }
    }
    if written != planned {
        write_manifest(out, "inspect-obs", &cfg, &written)?;
    }
    Ok(())
}
