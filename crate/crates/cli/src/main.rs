mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes: 0 success, 2 parse/config error, 3 degenerate state,
/// 4 integration failure.
#[derive(Parser)]
#[command(name = "hypertree", version, about = "Jacobi/hyperspherical trees, grand angular momentum, and N-body scattering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: std::path::PathBuf,
    /// Machine-readable output path (CSV or JSON); stdout when absent.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Verbose reporting.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a Jacobi tree, print node masses and the derived
    /// hyperspherical tree with angle ranges and path factors.
    Tree(Common),
    /// Decompose the grand angular momentum of a full system state.
    Decompose(Common),
    /// Integrate an N-body trajectory and write the diagnostics CSV.
    Simulate(Common),
    /// Solve the scattering-angle equation for one or more impact parameters.
    Scatter(Common),
    /// Tabulate the angle-averaged effective potential over a radial grid.
    Veff(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Tree(c) => commands::cmd_tree(c),
        Command::Decompose(c) => commands::cmd_decompose(c),
        Command::Simulate(c) => commands::cmd_simulate(c),
        Command::Scatter(c) => commands::cmd_scatter(c),
        Command::Veff(c) => commands::cmd_veff(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
