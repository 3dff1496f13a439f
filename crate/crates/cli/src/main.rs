//! `spe`: batch front end for the primitive-equations simulator.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 scientific
//! failure (a check or certificate did not pass), 3 runtime failure
//! (blow-up, I/O).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "spe", version, about = "Spectral Galerkin simulator for the stochastic primitive equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the noise envelope against the regularity window.
    Certify(Common),
    /// Integrate one trajectory or an ensemble.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long, value_name = "CHECKPOINT")]
        resume: Option<PathBuf>,
    },
    /// Run coupling chains and report return times.
    Couple(Common),
    /// Estimate the mixing rate from two initial states.
    Mixing(Common),
    /// Run the operator-identity, structure and energy-bound checks.
    Verify(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Root seed; overrides `integrator.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Accept checkpoints written under a different configuration.
    #[arg(long)]
    pub force: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Certify(c) => commands::certify(&c),
        Command::Simulate { common, resume } => commands::simulate(&common, resume.as_deref()),
        Command::Couple(c) => commands::couple(&c),
        Command::Mixing(c) => commands::mixing(&c),
        Command::Verify(c) => commands::verify(&c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
