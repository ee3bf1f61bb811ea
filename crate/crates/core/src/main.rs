use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spacetime_ns::cli::{describe, run, Experiment, RunConfig};
use spacetime_ns::Error;

/// Space-time variational solver for Navier-Stokes and heat on the periodic torus.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML configuration; missing keys take the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Random seed; overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the heat functional for single-mode data.
    HeatDemo(RunArgs),
    /// Minimize and certify the cutoff functional from Taylor-Green data.
    TaylorGreen(RunArgs),
    /// Sweep cutoff levels against an exact-flux reference solution.
    CutoffSweep(RunArgs),
    /// Finite-difference and first-variation checks of the gradient.
    Gradcheck(RunArgs),
    /// Reference stepper against the analytic Taylor-Green vortex.
    OracleCompare(RunArgs),
    /// Certify a field snapshot (`field_file`).
    Certify(RunArgs),
    /// Print what an experiment computes and its defaults.
    Describe { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::Describe { name } => {
            return match describe(&name) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
        Command::HeatDemo(a) => (Experiment::HeatDemo, a),
        Command::TaylorGreen(a) => (Experiment::TaylorGreen, a),
        Command::CutoffSweep(a) => (Experiment::CutoffSweep, a),
        Command::Gradcheck(a) => (Experiment::Gradcheck, a),
        Command::OracleCompare(a) => (Experiment::OracleCompare, a),
        Command::Certify(a) => (Experiment::Certify, a),
    };
    let user = match &args.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    match run(experiment, &user, args.seed, &args.out) {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{:<6} {} defect={:e} tol={:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.defect, c.tolerance);
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed: {}", outcome.failed().join(", "));
                ExitCode::from(1)
            }
        }
        Err(e @ Error::Divergence { .. }) => {
            eprintln!("failed: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
