//! `otbary`: barycenter runs, Gaussian oracle queries, convergence benchmarks,
//! test-shape generation and barycentric embedding fits.
//!
//! Every subcommand takes a JSON config. Exit status is 0 on success, 2 when
//! an iteration cap was hit (outputs are still written) and 1 on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod report;

use commands::Outcome;

#[derive(Parser, Debug)]
#[command(name = "otbary", version, about = "Entropic OT barycenters on fixed grids")]
struct Cli {
    /// Log progress to stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a barycenter and write it with a run report.
    Barycenter { config: PathBuf },
    /// Closed-form variance of a 1D Gaussian barycenter.
    Oracle { config: PathBuf },
    /// Per-sweep oracle error of IBP and the debiased solver.
    BenchConvergence { config: PathBuf },
    /// Nested-ellipse test shapes.
    GenEllipses {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit barycentric coordinates of a target over a dictionary.
    Embed {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pairwise Sinkhorn divergences.
    Divergence { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match &cli.command {
        Command::Barycenter { config } => commands::barycenter_cmd(config),
        Command::Oracle { config } => commands::oracle_cmd(config),
        Command::BenchConvergence { config } => commands::bench_convergence_cmd(config),
        Command::GenEllipses { config, seed } => commands::gen_ellipses_cmd(config, *seed),
        Command::Embed { config, seed } => commands::embed_cmd(config, *seed),
        Command::Divergence { config } => commands::divergence_cmd(config),
    };
    match outcome {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::MaxIter) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
