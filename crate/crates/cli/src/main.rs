//! `compass`: generate data, train, calibrate, evaluate, sweep and analyze.

mod commands;
mod config;
mod error;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::ExternalInput;
use crate::config::{Overrides, RunConfig};
use crate::error::CliError;
use crate::workspace::Workspace;

const OUT_DIR_ENV: &str = "COMPASS_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "compass",
    version,
    about = "Conformal metric intervals for a toy segmentation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (else `output_dir` in the config, else $COMPASS_OUT_DIR, else ./compass-out).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Override a config entry, e.g. `--set experiment.n_splits=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Replace the seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace the symmetric α list with this single level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Number of calibration/test resplits.
    #[arg(long, global = true)]
    splits: Option<usize>,
}

#[derive(Debug, Args)]
struct External {
    /// Container of per-sample `[1,H,W]` logits from another model.
    #[arg(long, requires = "metrics")]
    logits: Option<PathBuf>,
    /// `[n]` tensor of ground-truth metric values matching `--logits`.
    #[arg(long, requires = "logits")]
    metrics: Option<PathBuf>,
}

impl External {
    fn input(&self) -> Option<ExternalInput> {
        Some(ExternalInput {
            logits: self.logits.clone()?,
            metrics: self.metrics.clone()?,
        })
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset and the first split.
    Generate,
    /// Train the pipeline and fit the sensitive subspace.
    Train,
    /// Score the calibration set of the first split and calibrate every method.
    Calibrate(External),
    /// Build test intervals from calibration.csv and measure coverage.
    Evaluate(External),
    /// Trace area along perturbation lines and check nestedness.
    Sweep,
    /// Run all resplits for every seed and aggregate.
    Analyze,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Calibrate(_) => "calibrate",
            Command::Evaluate(_) => "evaluate",
            Command::Sweep => "sweep",
            Command::Analyze => "analyze",
        }
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("compass-out"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let overrides = Overrides {
        set: g.set,
        seed: g.seed,
        alpha: g.alpha,
        splits: g.splits,
    };
    let cfg = config::load(g.config.as_deref(), &overrides)?;
    let mut ws = Workspace::open(&out_dir(g.out, &cfg))?;
    let name = cli.command.name();
    let summary = match &cli.command {
        Command::Generate => commands::generate(&mut ws, &cfg)?,
        Command::Train => commands::train_cmd(&mut ws, &cfg)?,
        Command::Calibrate(ext) => commands::calibrate_cmd(&mut ws, &cfg, ext.input().as_ref())?,
        Command::Evaluate(ext) => commands::evaluate_cmd(&mut ws, &cfg, ext.input().as_ref())?,
        Command::Sweep => commands::sweep_cmd(&mut ws, &cfg)?,
        Command::Analyze => commands::analyze_cmd(&mut ws, &cfg)?,
    };
    let seeds = if name == "analyze" {
        cfg.experiment.seeds.clone()
    } else {
        vec![cfg.seed()]
    };
    ws.finish(name, &cfg, &seeds, summary)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().lines().next().unwrap_or("bad arguments").to_string());
            eprintln!("{}", err.json_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
