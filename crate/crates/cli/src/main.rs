mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Outcome;
use crate::config::{CommonArgs, Settings};

/// Debias vision-language text embeddings with orthogonal and calibrated
/// projections, and measure the effect.
#[derive(Debug, Parser)]
#[command(name = "debias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build P0, the calibration matrix and P* from prompt embeddings
    Build(CommonArgs),
    /// Apply a stored projection to an embedding set
    Apply(CommonArgs),
    /// Worst-group / average accuracy of zero-shot classifiers
    EvalGroups(CommonArgs),
    /// MaxSkew@k of retrieval results per attribute family
    EvalSkew(CommonArgs),
    /// Discrepancy of an attribute distribution from uniform
    EvalDiscrepancy(CommonArgs),
    /// Debias prompt embeddings for a generator with a calibration fitted on pairs
    GenerativePrep(CommonArgs),
    /// Check the closed forms against independent oracles
    Verify(CommonArgs),
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let (cmd, args): (fn(&Settings) -> anyhow::Result<Outcome>, CommonArgs) = match cli.command {
        Command::Build(a) => (commands::build::run, a),
        Command::Apply(a) => (commands::apply::run, a),
        Command::EvalGroups(a) => (commands::groups::run, a),
        Command::EvalSkew(a) => (commands::skew::run, a),
        Command::EvalDiscrepancy(a) => (commands::discrepancy::run, a),
        Command::GenerativePrep(a) => (commands::generative::run, a),
        Command::Verify(a) => (commands::verify::run, a),
    };
    cmd(&Settings::resolve(args)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are validation errors; 2 is reserved for failed checks
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
