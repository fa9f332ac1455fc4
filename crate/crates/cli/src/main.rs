use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use kyleback_cli::config::Stage;
use kyleback_cli::{run, RunConfig};

/// Environment variable holding the worker thread count.
const THREADS_VAR: &str = "KYLEBACK_THREADS";

#[derive(Parser)]
#[command(name = "kyleback", version, about = "Solve and verify Kyle-Back equilibria with a risk-averse insider")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured stages and write their outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the simulation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated stages: oracle, fixedpoint, simulate, checks, all.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<Stage>>,
    },
    /// Parse and validate a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_VAR} must be a positive integer"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { config } => {
            RunConfig::load(&config)?;
            println!("{}: ok", config.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, output, seed, stages } => {
            configure_threads()?;
            let mut cfg = RunConfig::load(&config)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            if let Some(s) = seed {
                cfg.simulation.seed = s;
            }
            if let Some(s) = stages {
                cfg.stages = s;
            }
            cfg.validate()?;
            let outcome = run(&cfg)?;
            for c in outcome.checks.iter().filter(|c| !c.pass) {
                eprintln!("check failed: {} (statistic {:e}, threshold {:e})", c.name, c.statistic, c.threshold);
            }
            if outcome.all_pass() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
