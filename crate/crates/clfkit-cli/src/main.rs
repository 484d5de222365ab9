//! `clfkit` — synthesize Sontag feedback from a CLF, simulate the closed
//! loop, and verify what the controller actually minimizes.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "clfkit",
    about = "CLF-based feedback synthesis and inverse-optimality experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config: checks, simulations, CSV + summary output.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Sampling seed (overrides the config's seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a config file without running anything.
    Validate { config: PathBuf },
    /// Built-in benchmark problems.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
}

#[derive(Subcommand)]
enum CatalogAction {
    /// List the available entries.
    List,
    /// Print an entry as a runnable config document.
    Export { name: String },
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, out, seed } => match runner::run(&config, out, seed)? {
            runner::RunStatus::Passed => Ok(ExitCode::SUCCESS),
            runner::RunStatus::CheckFailed => {
                eprintln!("one or more requested checks failed; see summary.json");
                Ok(ExitCode::from(2))
            }
        },
        Command::Validate { config } => {
            runner::validate(&config)?;
            println!("ok: {} is a valid experiment config", config.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Catalog { action } => match action {
            CatalogAction::List => {
                for name in clfkit::catalog::list_entries() {
                    let entry = clfkit::catalog::get_entry(name).expect("listed entry");
                    println!("{name}  -  {}", entry.description);
                }
                Ok(ExitCode::SUCCESS)
            }
            CatalogAction::Export { name } => {
                let doc = config::export_catalog_entry(&name)?;
                println!("{}", serde_json::to_string_pretty(&doc)?);
                Ok(ExitCode::SUCCESS)
            }
        },
    }
}
