//! Command-line harness: training, preview runs, comparisons, ablation
//! sweeps and the statistical studies, all driven by one JSON config.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use previewflow::CostModel;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "previewflow", version, about = "Low-resolution preview sampling for rectified-flow models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by the config-driven subcommands; each overrides the
/// matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Experiment config (JSON); defaults apply when absent.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seeds as "1,2,3" or "a..b" (end exclusive).
    #[arg(long, value_name = "LIST")]
    pub seeds: Option<String>,
    /// Worker threads for seed-level parallelism.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub cost_model: Option<CostModelArg>,
    /// Also write PNG images of every grid.
    #[arg(long)]
    pub export_images: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostModelArg {
    Linear,
    Quadratic,
}

impl From<CostModelArg> for CostModel {
    fn from(c: CostModelArg) -> Self {
        match c {
            CostModelArg::Linear => CostModel::Linear,
            CostModelArg::Quadratic => CostModel::Quadratic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Psnr,
    Piqe,
    Cost,
    Speedup,
}

impl MetricArg {
    pub const ALL: [MetricArg; 4] = [MetricArg::Psnr, MetricArg::Piqe, MetricArg::Cost, MetricArg::Speedup];

    pub fn name(self) -> &'static str {
        match self {
            MetricArg::Psnr => "psnr",
            MetricArg::Piqe => "piqe",
            MetricArg::Cost => "cost_units",
            MetricArg::Speedup => "speedup",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the toy velocity network.
    Train(Common),
    /// Sample previews, the full-resolution reference and the baselines.
    Preview(Common),
    /// Tabulate per-method metrics of preview run directories.
    Compare {
        /// Run directories written by `preview`.
        #[arg(required = true, value_name = "RUN")]
        runs: Vec<PathBuf>,
        /// Score each method against the same method's grids in this run
        /// instead of the block-averaged full-resolution sample.
        #[arg(long, value_name = "RUN")]
        against: Option<PathBuf>,
        /// Metrics to report (default: all).
        #[arg(long, value_enum, value_delimiter = ',')]
        metrics: Vec<MetricArg>,
        /// Directory for compare.csv; printed to stdout either way.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Sweep one design axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Option<config::Axis>,
    },
    /// Commutator-norm study and velocity cosine trace.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        test: Option<config::StatsTest>,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
