use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use sllg_cli::{run, workers_from_env, Command, RunArgs};

/// Stochastic LLG experiments. Worker threads come from `SLLG_WORKERS`
/// (default 1).
#[derive(Parser)]
#[command(name = "sllg", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = RunArgs { command: cli.command, config: cli.config, seed: cli.seed, out: cli.out, workers: workers_from_env() };
    ExitCode::from(run(&args) as u8)
}
