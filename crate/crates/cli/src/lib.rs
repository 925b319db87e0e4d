//! Command-line front end: configuration, file formats and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_calibrate, cmd_evaluate, cmd_segment, cmd_simulate};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

use config::{Orientation, ThresholdSetting};

#[derive(Debug, Parser)]
#[command(name = "fvarseg", version, about = "Two-stage change-point detection for factor-adjusted VAR time series")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset (data.csv, truth.json).
    Simulate(SimulateArgs),
    /// Segment a dataset.
    Segment(SegmentArgs),
    /// Fit threshold models on null simulations.
    Calibrate(CalibrateArgs),
    /// Monte Carlo evaluation against simulated ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// m1, m2, m3 or custom.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Generate without change points.
    #[arg(long)]
    pub no_changes: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// CSV input.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub orientation: Option<Orientation>,
    /// Skip Stage 1 and the factor adjustment.
    #[arg(long)]
    pub no_factor: bool,
    /// Keep column means.
    #[arg(long)]
    pub no_demean: bool,
    #[arg(long)]
    pub d: Option<usize>,
    /// Number, "default", "calibrate" or "model:<path>".
    #[arg(long)]
    pub stage1_threshold: Option<String>,
    /// Number, "default", "calibrate" or "model:<path>".
    #[arg(long)]
    pub stage2_threshold: Option<String>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Output model JSON.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

/// Parses flags, merges them into the configuration and runs the command.
pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    match cli.command {
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            if let Some(v) = a.scenario {
                s.scenario = v;
            }
            if let Some(v) = a.n {
                s.n = v;
            }
            if let Some(v) = a.p {
                s.p = v;
            }
            if let Some(v) = a.d {
                s.d = v;
            }
            if a.no_changes {
                s.changes = false;
            }
            cmd_simulate(&cfg, &a.out).map(|_| ())
        }
        Command::Segment(a) => {
            if a.input.is_some() {
                cfg.data.input = a.input;
            }
            if let Some(o) = a.orientation {
                cfg.data.orientation = o;
            }
            let s = &mut cfg.segment;
            s.no_factor |= a.no_factor;
            if a.no_demean {
                s.demean = false;
            }
            if let Some(d) = a.d {
                s.d = d;
            }
            if let Some(t) = a.stage1_threshold {
                s.stage1_threshold = ThresholdSetting::parse(&t);
            }
            if let Some(t) = a.stage2_threshold {
                s.stage2_threshold = ThresholdSetting::parse(&t);
            }
            cmd_segment(&cfg, &a.out).map(|_| ())
        }
        Command::Calibrate(a) => {
            if let Some(b) = a.replicates {
                cfg.calibrate.replicates = b;
            }
            if let Some(t) = a.tau {
                cfg.calibrate.tau = t;
            }
            cmd_calibrate(&cfg, &a.out).map(|_| ())
        }
        Command::Evaluate(a) => {
            if let Some(r) = a.replicates {
                cfg.evaluate.replicates = r;
            }
            cmd_evaluate(&cfg, &a.out).map(|_| ())
        }
    }
}
