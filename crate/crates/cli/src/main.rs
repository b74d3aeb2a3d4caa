use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dehrl::config::{presets, RunConfig};
use dehrl::metrics::{distinct_useful, emit_report, ProbeConfig, ProbeLabel};
use dehrl::runner::{self, RunSummary};
use dehrl::Error;

/// Train and inspect levelwise hierarchical agents.
#[derive(Parser)]
#[command(name = "dehrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a run from a TOML config file or a preset name.
    Run {
        config: String,
        /// Override the per-seed step budget.
        #[arg(long)]
        budget: Option<u64>,
        /// Override the seed list (comma separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Write the run here instead of under the output root.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Print subpolicy labels once training finishes.
        #[arg(long)]
        probe: bool,
    },
    /// Continue a run from its checkpoints.
    Resume {
        dir: PathBuf,
        #[arg(long)]
        probe: bool,
    },
    /// Print subpolicy labels of a run's checkpoints.
    Probe {
        dir: PathBuf,
        /// Fresh resets per upper action.
        #[arg(long, default_value_t = 32)]
        resets: usize,
    },
    /// Re-render CSV and SVG curves from a run's metrics.
    Report { dir: PathBuf },
    /// List the shipped presets, or print one.
    Presets { name: Option<String> },
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(arg: &str) -> Result<RunConfig, Failure> {
    let path = Path::new(arg);
    if path.exists() {
        return RunConfig::load(path).map_err(|e| match e {
            Error::Io { .. } => Failure::Config(e),
            other => other.into(),
        });
    }
    presets::load(arg).map_err(Failure::Config)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            budget,
            seeds,
            output,
            probe,
        } => {
            let mut config = load_config(&config)?;
            if let Some(b) = budget {
                config.budget = b;
            }
            if let Some(s) = seeds {
                config.seeds = s;
            }
            if output.is_some() {
                config.output = output;
            }
            config.validate().map_err(Failure::Config)?;
            let summary = runner::run(&config)?;
            print_summary(&summary);
            if probe {
                print_probe(&summary.run_dir, ProbeConfig::default())?;
            }
        }
        Command::Resume { dir, probe } => {
            let summary = runner::resume(&dir)?;
            print_summary(&summary);
            if probe {
                print_probe(&dir, ProbeConfig::default())?;
            }
        }
        Command::Probe { dir, resets } => {
            print_probe(
                &dir,
                ProbeConfig {
                    resets,
                    ..ProbeConfig::default()
                },
            )?;
        }
        Command::Report { dir } => {
            for key in emit_report(&dir)? {
                println!("{key}");
            }
        }
        Command::Presets { name } => match name {
            Some(n) => print!("{}", presets::text(&n).map_err(Failure::Config)?),
            None => {
                for (n, _) in presets::ALL {
                    println!("{n}");
                }
            }
        },
    }
    Ok(())
}

fn print_summary(summary: &RunSummary) {
    println!("run directory: {}", summary.run_dir.display());
    for s in &summary.seeds {
        println!(
            "seed {}: {} steps, {} episodes, final performance {:.3}, learning speed {:.3}",
            s.seed, s.steps, s.episodes, s.final_performance, s.learning_speed
        );
    }
}

fn print_probe(dir: &Path, probe: ProbeConfig) -> Result<(), Failure> {
    for (seed, labels) in runner::probe(dir, probe)? {
        let names: Vec<String> = labels.iter().map(ProbeLabel::to_string).collect();
        println!(
            "seed {seed}: {} ({} distinct useful)",
            names.join(" "),
            distinct_useful(&labels)
        );
    }
    Ok(())
}
