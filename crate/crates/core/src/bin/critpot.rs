use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use critpot::commands::run_command;
use critpot::config::RunConfig;

#[derive(Parser)]
#[command(name = "critpot", version, about = "Critical potentials of Schrödinger eigenvalues on 1D and 2D grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Io {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `directory` in [output].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Lowest eigenpairs and cluster table.
    Spectrum(Io),
    /// One-sided eigenvalue derivatives with finite-difference cross-check.
    Derivative(Io),
    /// Criticality certificate for one eigenvalue.
    Criticality(Io),
    /// Criticality certificate for an eigenvalue gap.
    Gap(Io),
    /// Projected subgradient optimization.
    Optimize(Io),
    /// Verification suites.
    Verify(Io),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, io) = match &cli.command {
        Command::Spectrum(io) => ("spectrum", io),
        Command::Derivative(io) => ("derivative", io),
        Command::Criticality(io) => ("criticality", io),
        Command::Gap(io) => ("gap", io),
        Command::Optimize(io) => ("optimize", io),
        Command::Verify(io) => ("verify", io),
    };
    let cfg = match RunConfig::load(&io.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}: {e}", io.config.display());
            return ExitCode::from(2);
        }
    };
    let Some(out) = io.out.clone().or_else(|| cfg.output.directory.clone()) else {
        eprintln!("no output directory: pass --out or set `directory` in [output]");
        return ExitCode::from(2);
    };
    match run_command(name, &cfg, &out) {
        Ok(report) => {
            for c in &report.checks {
                println!("{}", c.line());
            }
            println!("report: {}", out.join("report.json").display());
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("{name}: {e}");
            ExitCode::from(2)
        }
    }
}
