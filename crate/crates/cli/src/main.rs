use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use schwinger_flow::driver::{self, RunConfig};
use schwinger_flow::{par, DType};

/// Normalizing-flow sampler for the two-flavour Schwinger model.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Flat TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the configured precision (single or double).
    #[arg(long, global = true)]
    precision: Option<DType>,

    /// Runs every data-parallel loop sequentially.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trains the flow, writing metrics and checkpoints to the configured paths.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Runs an MIS chain from a trained checkpoint.
    Sample {
        /// Checkpoint to load; defaults to the configured checkpoint path.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Chain length.
        #[arg(long, default_value_t = 1 << 16)]
        steps: usize,
        /// Per-step CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference, bias-ratio and zero-variance gradient checks.
    CheckGrad,
    /// Graph size, saved memory and timing per estimator and lattice size.
    Profile,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = cli.precision {
        cfg.precision = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if cli.deterministic {
        par::set_parallel(false);
    }
    let cfg = load_config(&cli)?;
    let mut out = std::io::stdout().lock();
    match &cli.command {
        Command::Train { resume } => {
            let report = driver::train(&cfg, resume.as_deref(), &mut out)?;
            if let Some(last) = report.metrics.last() {
                writeln!(out, "done: {} steps, last ESS {:.4}, F_q {:.4}", report.steps, last.ess, last.f_q_mean)?;
            }
            if let Some(p) = &report.checkpoint {
                writeln!(out, "checkpoint: {}", p.display())?;
            }
        }
        Command::Sample { checkpoint, steps, out: csv } => {
            let ck = match checkpoint.clone().or_else(|| cfg.checkpoint_path.clone()) {
                Some(p) => p,
                None => bail!("no checkpoint given and none configured"),
            };
            let report = driver::sample(&cfg, &ck, *steps, csv.as_deref())?;
            report.write_summary(&mut out)?;
        }
        Command::CheckGrad => {
            let report = driver::check_grad(&cfg)?;
            writeln!(out, "{report}")?;
        }
        Command::Profile => {
            let report = driver::profile(&cfg)?;
            write!(out, "{report}")?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
