use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sln_me_cli::{compare, distance_json, run, CliError, PairingName, RunOptions, SolverName};

#[derive(Parser)]
#[command(
    name = "sln-me",
    version,
    about = "Open quantum system dynamics from stochastic Liouville trajectories and hierarchical master equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solver on a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        solver: Option<SolverName>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Check empirical noise moments of the ensemble (sln solvers).
        #[arg(long)]
        validate_noise: bool,
        /// Write the first trajectory's noise to noise.csv (sln solvers).
        #[arg(long)]
        dump_noise: bool,
        #[arg(long)]
        threads: Option<usize>,
        /// Node spacing of the class-2 triple integral, in grid steps.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, value_enum)]
        pairing: Option<PairingName>,
    },
    /// Compare two series (files or run directories).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let result: Result<(), CliError> = match Cli::parse().command {
        Command::Run {
            config,
            solver,
            trajectories,
            seed,
            output,
            validate_noise,
            dump_noise,
            threads,
            stride,
            pairing,
        } => {
            let opts =
                RunOptions { solver, trajectories, seed, output, stride, pairing, threads, validate_noise, dump_noise };
            run(&config, &opts).map(|outcome| println!("{}", outcome.output.join("summary.json").display()))
        }
        Command::Compare { a, b, output } => compare(&a, &b).and_then(|d| {
            let text = serde_json::to_string_pretty(&distance_json(&d))?;
            if let Some(path) = output {
                std::fs::write(path, &text)?;
            }
            println!("{text}");
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
