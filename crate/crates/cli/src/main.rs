//! Command-line front end: four subcommands over the library's command
//! entry points, with process exit status reflecting validation results.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rewardevo_core::config::RunConfig;
use rewardevo_core::harness::{self, HarnessError};

#[derive(Parser)]
#[command(name = "rewardevo", version, about = "Evolve instantaneous reward signals for a grid Pong agent and audit the runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run selection: train, test, eliminate, and mutate until one signal
    /// per goal survives or the round cap is hit.
    Evolve {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override the configured master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every grid signal at every checkpoint, with no elimination.
    Grid {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Replay recorded eliminations from a score report and a draws file.
    Replay {
        /// Score report the eliminations read fitness from.
        #[arg(long)]
        fitness: PathBuf,
        /// Recorded signal additions and tie draws.
        #[arg(long)]
        draws: PathBuf,
        /// Expected strikes and winners to diff against.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
    /// Score the event-reward signals plus the untrained random control.
    Baseline {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(RunConfig::parse(&text)?)
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Evolve { config, seed, out } => {
            let cfg = load_config(&config)?;
            let o = harness::cmd_evolve(&cfg, seed, out.as_deref())?;
            println!(
                "finished after {} rounds at checkpoint {}",
                o.run.records.len(),
                o.run.records.last().map(|r| r.checkpoint).unwrap_or(0)
            );
            if o.winners.is_empty() {
                println!("no convergence: some goal still holds several signals");
            } else {
                for (goal, id) in &o.winners {
                    println!("winner {goal}: {id}");
                }
            }
            for path in std::iter::once(&o.history_path).chain(&o.curve_paths) {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid { config } => {
            let cfg = load_config(&config)?;
            let o = harness::cmd_grid(&cfg)?;
            println!("scored {} signals, wrote {}", o.table.averages.len(), o.report_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Baseline { config } => {
            let cfg = load_config(&config)?;
            let o = harness::cmd_baseline(&cfg)?;
            println!("scored {} signals, wrote {}", o.table.averages.len(), o.report_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { fitness, draws, expect } => {
            let had_expectation = expect.is_some();
            let o = harness::cmd_replay(&fitness, &draws, expect.as_deref())?;
            print!("{}", o.printout);
            if !o.mismatches.is_empty() {
                for m in &o.mismatches {
                    eprintln!("mismatch: {m}");
                }
                return Ok(ExitCode::FAILURE);
            }
            if had_expectation {
                println!("expectation matched");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
