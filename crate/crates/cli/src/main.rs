//! `viscohom`: homogenize layered viscoelastic materials, generate training
//! data, train recurrent surrogates and run the macroscale comparisons.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "viscohom", version, about)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact pole/residue parameters of the configured material.
    Homogenize,
    /// Generate a strain/stress dataset.
    GenData,
    /// Train a surrogate; writes weights and the loss history.
    Train {
        /// Train on an existing dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the fine-scale or a homogenized solver.
    Simulate {
        /// Surrogate weights for the macro_surrogate backend.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Relative error curve between two simulation results.
    Compare {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Test error of a surrogate across time steps.
    DtRobustness {
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Comma-separated step list, e.g. 0.002,0.004.
        #[arg(long, value_delimiter = ',')]
        dts: Option<Vec<f64>>,
    },
    /// Sweep the learned maps and score their linearity.
    ProbeLinearity {
        #[arg(long)]
        weights: PathBuf,
    },
}

/// 1 for bad input, 2 when the numerics fail.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| e.downcast_ref::<viscohom::Error>().is_some_and(|e| e.is_numerical()));
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let kind = if code == 2 { "numerical" } else { "validation" };
            eprintln!("error[{kind}]: {err:#}");
            ExitCode::from(code)
        }
    }
}
