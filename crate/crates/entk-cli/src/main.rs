//! `entk` — experiment runner for tangent-kernel training dynamics.
//!
//! Subcommands: `dynamics` (train and measure kernel evolution), `switch`
//! (standard-then-linearized training sweep), `embed` (recompute the kernel
//! embedding from a stored run), `validate` (built-in invariant suite).
//! Exit codes: 0 success, 1 usage/config error, 2 numeric divergence.

mod config;
mod out;
mod runs;
mod svg;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "entk", version, about = "Tangent-kernel training dynamics harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model, caching the probe Gram matrix at every checkpoint,
    /// and write distance curves, velocity, cone report, and embedding.
    Dynamics(RunArgs),
    /// Sweep the standard-to-linearized switching iteration and record
    /// final test metrics per grid point.
    Switch(RunArgs),
    /// Recompute the kernel embedding of a stored run from its checkpoints.
    Embed(RunArgs),
    /// Run the built-in invariant suite on tiny models.
    Validate {
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to the experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out.dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the global seed (derived seeds are re-derived).
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn load_config(args: &RunArgs) -> entk::Result<config::ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg = config::parse(&text)?;
    cfg.resolve(args.seed)?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> entk::Result<bool> {
    match cli.cmd {
        Cmd::Dynamics(args) => {
            let cfg = load_config(&args)?;
            runs::run_dynamics(&cfg, args.quiet)?;
            Ok(true)
        }
        Cmd::Switch(args) => {
            let cfg = load_config(&args)?;
            runs::run_switch(&cfg, args.quiet)?;
            Ok(true)
        }
        Cmd::Embed(args) => {
            let cfg = load_config(&args)?;
            runs::run_embed(&cfg, args.quiet)?;
            Ok(true)
        }
        Cmd::Validate { quiet } => validate::run_validate(quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(runs::exit_code_for(&err))
        }
    }
}
