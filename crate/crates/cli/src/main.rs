//! `kvpareto`: sweep KV-cache quantization, chunked prefill and 4-bit weight
//! quantization over a toy transformer, query the analytic memory model, and
//! extract memory/accuracy frontiers.
//!
//! Exit codes: 0 success, 2 configuration or parse error, 3 evaluation failure.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod svg;

use commands::{cmd_eval, cmd_frontier, cmd_memory, cmd_sweep};

#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub code: u8,
}

impl CliError {
    fn parse(message: String) -> Self {
        Self { message, code: 2 }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "kvpareto",
    version,
    about = "Joint memory/accuracy sweeps for KV-cache quantization, chunked prefill and 4-bit weights"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a configuration grid and write results.csv + summary.json.
    Sweep(commands::SweepArgs),
    /// Analytic memory breakdown for one architecture and configuration.
    Memory(commands::MemoryArgs),
    /// Recompute the frontier from a results CSV; optionally plot it.
    Frontier(commands::FrontierArgs),
    /// Evaluate a single configuration for debugging.
    Eval(commands::EvalArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Memory(args) => cmd_memory(args),
        Cmd::Frontier(args) => cmd_frontier(args),
        Cmd::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
