//! Command-line entry point. Exit status: `0` when the command ran and every
//! invariant it asserts held, `1` when an invariant failed, `2` on errors
//! (unreadable config, missing inputs, invalid arguments).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, ValueEnum};

use npmd_cli::commands::{self, CommandOutcome};
use npmd_cli::config::{parse_config, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CommandName {
    /// Sampled actor-critic runs, one per seed.
    Npmd,
    /// Exact tabular mirror-descent baseline with certified decay.
    ExactPmd,
    /// Empirical check of the geometric-stopping visitation sampler.
    SamplerCheck,
    /// Interpolation error audit on certified-smoothness test functions.
    SplineRate,
    /// Environment smoothness constants and measured value smoothness.
    LipschitzReport,
    /// Actor-critic grid over embedding dimension, sample size, and seed.
    ResolutionSweep,
    /// Merge finished runs into plots and a combined CSV.
    Report,
}

#[derive(Debug, Parser)]
#[command(name = "npmd", about = "Policy-optimization laboratory driver")]
struct Cli {
    /// Which experiment to run.
    #[arg(long, value_enum)]
    command: CommandName,

    /// TOML experiment configuration; required by every command but report.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Directory where artifacts are written.
    #[arg(long)]
    out: PathBuf,

    /// Comma-separated seed list (e.g. `--seed 1,2,3`); defaults to the
    /// configured run seed.
    #[arg(long)]
    seed: Option<String>,

    /// Config patch `key.path=value`, applied in order after parsing;
    /// repeatable.
    #[arg(long = "override")]
    overrides: Vec<String>,

    /// Finished run directories consumed by the report command.
    run_dirs: Vec<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config is required for this command"))?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text, &cli.overrides)
}

fn seed_list(cli: &Cli, cfg: &ExperimentConfig) -> Result<Vec<u64>> {
    match &cli.seed {
        Some(list) => list
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<u64>().map_err(|_| anyhow!("bad seed entry {tok:?} in --seed"))
            })
            .collect(),
        None => Ok(vec![cfg.npmd.as_ref().map(|n| n.seed).unwrap_or(0)]),
    }
}

fn run(cli: &Cli) -> Result<CommandOutcome> {
    match cli.command {
        CommandName::Npmd => {
            let cfg = load_config(cli)?;
            let seeds = seed_list(cli, &cfg)?;
            commands::cmd_npmd(&cfg, &cli.out, &seeds)
        }
        CommandName::ExactPmd => {
            let cfg = load_config(cli)?;
            commands::cmd_exact_pmd(&cfg, &cli.out)
        }
        CommandName::SamplerCheck => {
            let cfg = load_config(cli)?;
            let seeds = seed_list(cli, &cfg)?;
            commands::cmd_sampler_check(&cfg, &cli.out, &seeds)
        }
        CommandName::SplineRate => {
            let cfg = load_config(cli)?;
            commands::cmd_spline_rate(&cfg, &cli.out)
        }
        CommandName::LipschitzReport => {
            let cfg = load_config(cli)?;
            commands::cmd_lipschitz_report(&cfg, &cli.out)
        }
        CommandName::ResolutionSweep => {
            let cfg = load_config(cli)?;
            let seeds = seed_list(cli, &cfg)?;
            commands::cmd_resolution_sweep(&cfg, &cli.out, &seeds)
        }
        CommandName::Report => commands::cmd_report(&cli.run_dirs, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.passed {
                println!("PASS");
                ExitCode::SUCCESS
            } else {
                println!("FAIL");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
