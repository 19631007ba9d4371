mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use storelight::Solver;

/// Simulate, optimize and cross-check light storage in a Lambda-type ensemble.
#[derive(Parser)]
#[command(name = "storelight", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Propagation model; overrides `solver` from the config.
    #[arg(long)]
    solver: Option<Solver>,
    /// Worker threads for sweeps, studies and map construction.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    parallel: Option<u16>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one write/store/retrieve cycle.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also dump field snapshots for both stages.
        #[arg(long)]
        trajectory: bool,
    },
    /// Run the time-reversal iteration, or a control study if the config has one.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Optimize at every value of the configured sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Build the discretized input/output map and its spectral optimum.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Compare the iteration against a map written by `oracle`.
    Crosscheck {
        #[command(flatten)]
        common: Common,
        /// Directory holding map.json and map.bin.
        #[arg(long)]
        map: PathBuf,
    },
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const IO: u8 = 1;

    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: Self::CONFIG,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: Self::IO,
            message: message.into(),
        }
    }
}

impl From<storelight::Error> for CliError {
    fn from(e: storelight::Error) -> Self {
        use storelight::Error as E;
        let code = match e {
            E::InvalidParameter(_) | E::WindowMismatch(_) | E::ConfigMismatch(_) | E::Parse(_) => {
                Self::CONFIG
            }
            E::DegenerateRetrieval(_) | E::Diverged { .. } | E::NonFiniteMatrix { .. } => {
                Self::NUMERICAL
            }
            E::Io(_) => Self::IO,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Simulate { common, .. }
        | Command::Optimize { common }
        | Command::Sweep { common }
        | Command::Oracle { common }
        | Command::Crosscheck { common, .. } => common,
    };
    if let Some(n) = common.parallel {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start {n} worker threads: {e}")))?;
    }
    let resolved = config::load(&common.config, common.solver)?;
    for warning in &resolved.warnings {
        eprintln!("warning: {warning}");
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| resolved.config.output_dir.clone());
    match &cli.command {
        Command::Simulate { trajectory, .. } => commands::simulate(&resolved, &out, *trajectory),
        Command::Optimize { .. } => commands::optimize(&resolved, &out),
        Command::Sweep { .. } => commands::sweep(&resolved, &out),
        Command::Oracle { .. } => commands::oracle(&resolved, &out),
        Command::Crosscheck { map, .. } => commands::crosscheck(&resolved, map, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
