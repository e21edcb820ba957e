//! `damr` command-line entry point.
//!
//! Errors are printed as a single `error[<kind>]: <message>` line on stderr.
//! Exit codes: 2 for configuration or usage errors, 3 for missing input
//! files, 1 for anything that fails at run time.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Schema(String),
    Missing(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Schema(m) => ("schema", m),
            CliError::Missing(m) => ("missing", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        write!(f, "error[{kind}]: {}", msg.replace(['\n', '\r'], " "))
    }
}

#[derive(Parser)]
#[command(name = "damr", version, about = "Multi-receiver modulation recognition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it to the configured path.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train lamr (one model per receiver), centamr, damr-f8 or damr-f256.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
    },
    /// Evaluate one method on the test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
    },
    /// Evaluate every method and write the comparison tables.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Also time every networked method (the perf table is empty otherwise).
        #[arg(long)]
        with_perf: bool,
    },
    /// Time message-level episodes of one networked method.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
    },
    /// List the accepted configuration keys.
    Keys,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config } => commands::gen_data(&config),
        Command::Train { config, method } => commands::train(&config, &method),
        Command::Eval { config, method } => commands::eval(&config, &method),
        Command::Compare { config, with_perf } => commands::compare(&config, with_perf),
        Command::Bench { config, method } => commands::bench(&config, &method),
        Command::Keys => {
            for (key, doc) in config::KEYS {
                println!("{key:<16} {doc}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
