use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

/// Exit status of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Ok = 0,
    CheckFailed = 1,
    Usage = 2,
    Numeric = 3,
}

#[derive(Parser, Debug)]
#[command(
    name = "derivprop",
    version,
    about = "Output-derivative backpropagation: expansions, gradient checks, PDE solves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the chain-rule expansion of D^S σ(z).
    Expand {
        /// Multi-index such as "(2,0)".
        index: String,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Compare backward-pass gradients with finite differences on a small network.
    Check {
        config: PathBuf,
        /// Perturb one computed gradient before comparing (negative control).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train a network on the configured problem.
    Solve {
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Start from the weights of a saved model.
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Worker threads (default: DERIVPROP_THREADS or 1).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Evaluate a saved model and its derivatives on a grid, as CSV.
    Sample {
        model: PathBuf,
        /// Supplies the domain and the residual column.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Nodes per axis, e.g. "3x3".
        #[arg(long, default_value = "11")]
        grid: String,
        /// Derivative column, repeatable, e.g. --deriv "(2,0)".
        #[arg(long = "deriv")]
        derivs: Vec<String>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Expand { index, json } => commands::expand(&index, json),
        Command::Check {
            config,
            inject_fault,
        } => commands::check(&config, inject_fault),
        Command::Solve {
            config,
            out,
            iterations,
            seed,
            init_from,
            threads,
        } => commands::solve(&commands::SolveArgs {
            config,
            out,
            iterations,
            seed,
            init_from,
            threads,
        }),
        Command::Sample {
            model,
            config,
            grid,
            derivs,
            out,
        } => commands::sample(&model, config.as_deref(), &grid, &derivs, out.as_deref()),
    };
    ExitCode::from(outcome as u8)
}
