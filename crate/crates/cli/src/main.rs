//! Command-line runner for the coupling-manifold solvers and experiments.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cmm::solvers::SolverKind;

use config::{Command, Overrides, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "cmm", version, about = "Optimal transport on the coupling manifold")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve one problem and compare against the matching baseline.
    Solve(Args),
    /// Compare the manifold solver with Sinkhorn over a regularizer grid.
    SweepLambda(Args),
    /// Order-preserving distance between two sequences.
    OpwDist(Args),
    /// Two-moons domain adaptation over rotation angles.
    DomainAdapt(Args),
    /// Finite-difference check of the Riemannian gradient and Hessian.
    Check(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the run.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_solver)]
    solver: Option<SolverKind>,
    /// Regularizer weight (a single-point grid for sweep-lambda).
    #[arg(long)]
    lambda: Option<f64>,
    /// Rotation angle in degrees; repeat for several.
    #[arg(long = "rotation")]
    rotations: Vec<f64>,
    /// Trials per angle (domain-adapt) or random directions (check).
    #[arg(long)]
    trials: Option<usize>,
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    s.parse().map_err(|e: cmm::Error| e.to_string())
}

fn run(command: Command, args: Args) -> Result<(), CliError> {
    let overrides = Overrides {
        out: args.out,
        seed: args.seed,
        solver: args.solver,
        lambda: args.lambda,
        rotations: args.rotations,
        trials: args.trials,
    };
    let cfg = RunConfig::load(command, args.config.as_deref(), &overrides)?;
    match command {
        Command::Solve => commands::cmd_solve(&cfg),
        Command::SweepLambda => commands::cmd_sweep(&cfg),
        Command::OpwDist => commands::cmd_opw(&cfg),
        Command::DomainAdapt => commands::cmd_domain_adapt(&cfg),
        Command::Check => commands::cmd_check(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config("arguments", e.to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    let (command, args) = match cli.command {
        Sub::Solve(a) => (Command::Solve, a),
        Sub::SweepLambda(a) => (Command::SweepLambda, a),
        Sub::OpwDist(a) => (Command::OpwDist, a),
        Sub::DomainAdapt(a) => (Command::DomainAdapt, a),
        Sub::Check(a) => (Command::Check, a),
    };
    match run(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
