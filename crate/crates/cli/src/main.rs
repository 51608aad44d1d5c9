//! `ensemble`: synthesis, simulation and figure demos for linear ensembles.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 numerical failure,
//! 4 tolerance not met.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ensemble_core::EnsembleError;

#[derive(Parser, Debug)]
#[command(name = "ensemble", version, about = "Open-loop steering of linear ensembles")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "ENSEMBLE_OUT", default_value = "ensemble-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, serde::Serialize)]
#[serde(rename_all = "snake_case", tag = "command")]
pub enum Command {
    /// Minimum-norm control for a JSON run spec, verified by simulation.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Simulate a JSON run spec under a control CSV (`t,re_0,im_0,...`).
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        control: PathBuf,
    },
    /// Discrete prolate spheroidal sequences.
    Dpss {
        #[arg(long = "N")]
        n: usize,
        #[arg(long = "W")]
        w: f64,
        /// Number of sequences (default: all above the concentration floor).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Amplitude-constrained harmonic steering as a box QP.
    Qp {
        #[arg(long = "T")]
        t: f64,
        #[arg(long, default_value_t = 51)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        bound: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Frequency nodes for the distance report.
        #[arg(long, default_value_t = 51)]
        n_omega: usize,
    },
    /// Reproduce one of the figures.
    Demo {
        #[arg(value_enum)]
        figure: Figure,
    },
    /// Picard diagnostic for a JSON run spec.
    Diagnose {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure { code: 2, message: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Failure { code: 3, message: msg.into() }
    }

    /// Wraps a core error with the step that produced it.
    pub fn core(context: &str) -> impl FnOnce(EnsembleError) -> Failure + '_ {
        move |e| {
            let code = match e {
                EnsembleError::Parameter(_) | EnsembleError::Shape(_) => 2,
                EnsembleError::Integration { .. } | EnsembleError::Numerical(_) => 3,
                EnsembleError::ToleranceNotMet(_) => 4,
            };
            Failure { code, message: format!("{context}: {e}") }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(manifest) => {
            println!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
