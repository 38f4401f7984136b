//! `mare`: solve, certify, sweep and simulate MARE problems from files.
//!
//! Exit codes: 0 on success (converged, feasible, stable), 2 when the
//! answer is negative (diverged, infeasible, not mean-square stable), and
//! 1 on usage or input errors.

mod commands;
mod output;
mod problem;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::output::Format;
use crate::problem::InitialGuess;

#[derive(Parser, Debug)]
#[command(name = "mare", version, about = "Modified algebraic Riccati equation toolkit")]
struct Cli {
    /// Structured JSON output
    #[arg(long, global = true, conflicts_with = "csv")]
    json: bool,
    /// CSV output
    #[arg(long, global = true)]
    csv: bool,
    /// Allow more than 12 channels. Every operator application sums over
    /// all 2^m delivery subsets, so cost doubles with each channel.
    #[arg(long, global = true)]
    force_m: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SolverArgs {
    /// Relative step tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration cap
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Initial iterate: zero, identity, or a scale c for c*I
    #[arg(long)]
    pub s0: Option<InitialGuess>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GainSource {
    FromSolve,
    File(PathBuf),
}

impl std::str::FromStr for GainSource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "from-solve" => GainSource::FromSolve,
            path => GainSource::File(PathBuf::from(path)),
        })
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Iterate the MARE to its fixed point and report S and K
    Solve {
        /// Problem file (JSON)
        file: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the full solution as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean-square spectral radius of the closed loop
    Stability {
        /// Problem file (JSON)
        file: PathBuf,
        /// from-solve, or a JSON file holding a gain matrix or a solution dump
        /// from-solve, or a JSON file holding a gain matrix or a solution dump
        #[arg(long, default_value = "from-solve")]
        gain: GainSource,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Build and check the LMI certificate from the inflated fixed point
    LmiCheck {
        /// Problem file (JSON)
        file: PathBuf,
        /// Inflation margin: S = (1 + delta) * S_bar
        #[arg(long, default_value_t = mare_core::lmi::DEFAULT_DELTA)]
        delta: f64,
        /// Replace a singular W by W + eps*I
        #[arg(long)]
        regularize: bool,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the certificate as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bisect the convergence boundary along nu_bar(t) = t * direction
    Sweep {
        /// Problem file (JSON)
        file: PathBuf,
        /// "uniform" or comma-separated direction entries in (0, 1]
        #[arg(long, default_value = "uniform")]
        ray: String,
        /// Lower end of the scale bracket
        #[arg(long, default_value_t = 0.05)]
        lo: f64,
        /// Upper end of the scale bracket
        #[arg(long, default_value_t = 1.0)]
        hi: f64,
        /// Final bracket width
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Iteration cap per probe (default 100000)
        #[arg(long)]
        max_iter: Option<usize>,
        /// Initial iterate: zero, identity, or a scale c for c*I
        #[arg(long)]
        s0: Option<InitialGuess>,
    },
    /// Monte-Carlo closed loop compared with the analytic covariance
    Simulate {
        /// Problem file (JSON)
        file: PathBuf,
        /// Steps per trial (default 100000)
        #[arg(long)]
        steps: Option<usize>,
        /// Independent trials (default 8)
        #[arg(long)]
        trials: Option<usize>,
        /// Master seed (default 0)
        #[arg(long)]
        seed: Option<u64>,
        /// Process noise covariance q*I (overrides sim.q_noise)
        #[arg(long)]
        qnoise: Option<f64>,
        /// from-solve, or a JSON file holding a gain matrix or a solution dump
        #[arg(long, default_value = "from-solve")]
        gain: GainSource,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Re-load a solution or certificate written with --out and re-check it
    Verify {
        /// Problem file
        /// Problem file (JSON)
        file: PathBuf,
        /// Solution or certificate JSON
        dump: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage errors exit 1; --help and --version exit 0
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    let format = if cli.json {
        Format::Json
    } else if cli.csv {
        Format::Csv
    } else {
        Format::Human
    };
    let ctx = commands::Context {
        format,
        force_m: cli.force_m,
    };
    let result = match cli.command {
        Command::Solve { file, solver, out } => commands::solve(&ctx, &file, &solver, out.as_deref()),
        Command::Stability { file, gain, solver } => commands::stability(&ctx, &file, &gain, &solver),
        Command::LmiCheck {
            file,
            delta,
            regularize,
            solver,
            out,
        } => commands::lmi_check(&ctx, &file, delta, regularize, &solver, out.as_deref()),
        Command::Sweep {
            file,
            ray,
            lo,
            hi,
            tol,
            max_iter,
            s0,
        } => commands::sweep(
            &ctx,
            &file,
            &ray,
            lo,
            hi,
            tol,
            &SolverArgs {
                tol: None,
                max_iter,
                s0,
            },
        ),
        Command::Simulate {
            file,
            steps,
            trials,
            seed,
            qnoise,
            gain,
            solver,
        } => commands::simulate(
            &ctx,
            &file,
            commands::SimArgs {
                steps,
                trials,
                seed,
                qnoise,
            },
            &gain,
            &solver,
        ),
        Command::Verify { file, dump } => commands::verify(&ctx, &file, &dump),
    };
    match result {
        Ok(commands::Status::Success) => ExitCode::SUCCESS,
        Ok(commands::Status::Negative) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
