mod commands;
mod config;
mod dataset;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

/// Control-variates treatment-effect estimation with a validation subsample.
#[derive(Debug, Parser)]
#[command(name = "cvme", version, arg_required_else_help = true)]
struct Cli {
    /// Print the configuration file schema and exit.
    #[arg(long)]
    print_config_schema: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset and write it as CSV.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add the simulator-only columns a_full, y0, y1, kappa_true.
        #[arg(long)]
        include_oracle: bool,
    },
    /// Run estimators on a CSV dataset.
    Estimate {
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo grid; writes a metrics CSV and a JSON manifest beside it.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time each estimator on fixed simulated datasets.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.print_config_schema {
        print!("{}", config::SCHEMA);
        return Ok(());
    }
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        None => Err(CliError::Config("no subcommand given".into())),
        Some(Command::Generate { config, seed, out, include_oracle }) => {
            commands::cmd_generate(config.as_deref(), seed, out.as_deref(), include_oracle)
        }
        Some(Command::Estimate { dataset, config, seed, out }) => {
            commands::cmd_estimate(&dataset, config.as_deref(), seed, out.as_deref())
        }
        Some(Command::Simulate { config, seed, out }) => commands::cmd_simulate(&config, seed, cli.threads, &out),
        Some(Command::Benchmark { config, out }) => commands::cmd_benchmark(config.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cvme: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
