use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use fedpoison_cli::config::{parse_config, Sweep, SweepAxis};
use fedpoison_cli::experiment::{report, run_experiment};

#[derive(Parser)]
#[command(name = "fedpoison", version, about = "Federated learning poisoning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides experiment.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds per sweep value (overrides experiment.repeats).
        #[arg(long)]
        repeats: Option<usize>,
        /// AXIS=v1,v2,... with AXIS one of fake_fraction, lambda, beta, clip, none.
        #[arg(long)]
        sweep: Option<String>,
        /// First master seed (overrides experiment.seed_base).
        #[arg(long)]
        seed_base: Option<u64>,
        /// Worker threads; defaults to one per core.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn parse_sweep(spec: &str) -> Result<Sweep> {
    let (axis, values) = spec.split_once('=').unwrap_or((spec, ""));
    let Some(axis) = SweepAxis::parse(axis.trim()) else {
        bail!("--sweep: unknown axis {axis:?}");
    };
    let values = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().with_context(|| format!("--sweep: bad value {v:?}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep { axis, values })
}

fn run() -> Result<bool> {
    let Command::Run { config, out, repeats, sweep, seed_base, threads } = Cli::parse().command;
    let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    if let Some(repeats) = repeats {
        cfg.repeats = repeats;
    }
    if let Some(sweep) = sweep {
        cfg.sweep = parse_sweep(&sweep)?;
    }
    if let Some(seed) = seed_base {
        cfg.seed_base = seed;
        cfg.sim.master_seed = seed;
    }
    if threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    cfg.validate()?;

    let result = run_experiment(&cfg, threads)?;
    report(&cfg, &result, &mut std::io::stdout().lock())?;
    println!("wrote {}", cfg.out_dir.display());
    Ok(result.aborted() == 0)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some runs aborted; partial results were written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
