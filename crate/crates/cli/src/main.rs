//! `maxreg`: runs evolution-equation experiments from TOML configs and
//! writes CSV artifacts plus a flat `summary.txt`.
//!
//! Exit status: 0 when every asserted check passes, 1 when a check fails,
//! 2 on configuration or solver errors.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod expr;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;

#[derive(Debug, Parser)]
#[command(name = "maxreg", version, about = "Non-autonomous evolution equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: `run.out` from the config, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed of the randomized suites (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for independent cases.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Tolerance of the reference integrator (overrides `run.oracle_tol`).
    #[arg(long, global = true)]
    oracle_tol: Option<f64>,

    /// Compare discrete trajectories with the reference integrator.
    #[arg(long, global = true)]
    oracle: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// θ-scheme on `run.steps` uniform steps.
    Solve,
    /// Space-time Galerkin method on `run.cells` time cells.
    Spacetime,
    /// θ-scheme glued across the breakpoints of a piecewise form.
    Glue,
    /// Final-time errors over `run.refinements` with observed orders.
    Convergence,
    /// Resolvent and square-root bounds (random suite without --config).
    VerifyBounds,
    /// Maximal-regularity estimate (random suite without --config).
    VerifyMr,
    /// Picard iteration for the quasilinear problem.
    Quasilinear,
    /// θ × refinement grid against the reference integrator.
    Sweep,
}

fn run(cli: Cli) -> Result<bool, String> {
    let config = cli.config.as_deref().map(config::load).transpose()?;
    let run = config.as_ref().map(|c| c.run.clone()).unwrap_or_default();
    let oracle_tol = cli.oracle_tol.unwrap_or(run.oracle_tol);
    if !(maxreg::oracle::MIN_TOL..=maxreg::oracle::MAX_TOL).contains(&oracle_tol) {
        return Err(format!(
            "oracle tolerance {oracle_tol:e} outside [{:e}, {:e}]",
            maxreg::oracle::MIN_TOL,
            maxreg::oracle::MAX_TOL
        ));
    }
    let ctx = Context {
        out: cli.out.or(run.out).unwrap_or_else(|| PathBuf::from("out")),
        config,
        seed: cli.seed,
        jobs: cli.jobs,
        oracle_tol,
        oracle: cli.oracle,
    };
    match cli.command {
        Command::Solve => commands::solve(&ctx),
        Command::Spacetime => commands::spacetime(&ctx),
        Command::Glue => commands::glue(&ctx),
        Command::Convergence => commands::convergence(&ctx),
        Command::VerifyBounds => commands::verify_bounds(&ctx),
        Command::VerifyMr => commands::verify_mr(&ctx),
        Command::Quasilinear => commands::quasilinear(&ctx),
        Command::Sweep => commands::sweep(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("maxreg: one or more checks failed (see summary.txt)");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
