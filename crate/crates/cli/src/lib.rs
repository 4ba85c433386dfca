//! Subcommands for corpus generation, training, evaluation, gradient checks
//! and Verilog-A export.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use hybrid_core::models::ModelKind;

pub use commands::*;
pub use config::*;
pub use error::*;

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse::<ModelKind>()
        .map_err(|_| format!("expected one of ctrnn, ncde, node-rnn, ncde-rnn; got `{s}`"))
}

#[derive(Debug, Parser)]
#[command(name = "hybrid-dyn", version, about = "Hybrid ODE/CDE + RNN behavioral models")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-waveform work.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: u64,
    /// Directory every output is written under.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Suppress per-epoch progress.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the diode-RC corpus and write CSVs plus a manifest.
    GenerateData {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train one model kind on a generated corpus.
    Train {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<ModelKind>,
        /// Defaults to `<out>/data/manifest.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// NRMSE of a checkpoint over one split.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Cross-check the gradient passes on random small models.
    Gradcheck {
        #[arg(long)]
        models: Option<usize>,
    },
    /// Write a checkpoint as a Verilog-A module.
    Export {
        #[arg(long)]
        weights: PathBuf,
    },
    /// Export, reparse and interpret a checkpoint; compare with the native model.
    VerifyExport {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        timestep: Option<f64>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        frequency: Option<f64>,
        #[arg(long)]
        ceiling: Option<f64>,
    },
}
