//! Command-line arguments. The parsed arguments double as the run
//! configuration embedded in every report, so a report can be replayed.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kbal::sim::SimScenario;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "kbal", version, about = "Sinkhorn and kernel density balancing of contact data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Directory receiving all outputs (created if missing).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Convergence tolerance (default 1e-8 for matrices, 1e-6 for kernels).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Iteration budget (default 10000 for matrices, 500 for kernels).
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sk,
    Ssk,
    Ksk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Ksk,
    Ssk,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionArg {
    Cv,
    Oracle,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize, PartialEq)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Balance a dense matrix (TSV with an `n=<int>` header).
    BalanceMatrix(BalanceMatrixArgs),
    /// Kernel balancing of a contact sample (x, y, count TSV).
    BalanceKernel(BalanceKernelArgs),
    /// Two-fold CV over kernel bandwidths.
    SelectBandwidth(SelectBandwidthArgs),
    /// Two-fold CV over histogram bin counts.
    SelectBinsize(SelectBinsizeArgs),
    /// Draw a sample from the synthetic design, optionally running a rate experiment.
    Simulate(SimulateArgs),
    /// Error of a bias estimate against the synthetic truth.
    Evaluate(EvaluateArgs),
    /// Convert a genomic coordinate list into a unit-square sample.
    Ingest(IngestArgs),
    /// Re-run the configuration stored in a report.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BalanceMatrix(_) => "balance-matrix",
            Command::BalanceKernel(_) => "balance-kernel",
            Command::SelectBandwidth(_) => "select-bandwidth",
            Command::SelectBinsize(_) => "select-binsize",
            Command::Simulate(_) => "simulate",
            Command::Evaluate(_) => "evaluate",
            Command::Ingest(_) => "ingest",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct BalanceMatrixArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Algorithm::Ssk)]
    pub algorithm: Algorithm,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct BalanceKernelArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Kernel bandwidth; required unless `--select` is given.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Choose the bandwidth among `--candidates` by two-fold CV.
    #[arg(long)]
    pub select: bool,
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<f64>,
    #[arg(long, default_value_t = kbal::DEFAULT_GRID_M)]
    pub grid: usize,
    #[arg(long, value_enum, default_value_t = Algorithm::Ksk)]
    pub algorithm: Algorithm,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SelectBandwidthArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to 15 log-spaced values in [0.005, 0.1].
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<f64>,
    #[arg(long, default_value_t = kbal::DEFAULT_GRID_M)]
    pub grid: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SelectBinsizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to 16,24,32,48,64,96,128,160.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct SimulateArgs {
    /// Sample size of the emitted sample.
    #[arg(long, default_value_t = 65_000)]
    pub n: usize,
    /// Scenario JSON; missing fields take their defaults.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario grid size.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Run the error-versus-sample-size experiment.
    #[arg(long)]
    pub rate: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [4_000usize, 8_000, 16_000, 32_000, 64_000])]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = SelectionArg::Oracle)]
    pub selection: SelectionArg,
    /// Filled in when the run starts; replays use it instead of `scenario`.
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_scenario: Option<SimScenario>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct EvaluateArgs {
    /// Bias estimate as `center<TAB>value` lines.
    #[arg(long)]
    pub input: PathBuf,
    /// Scenario JSON holding the true bias; defaults to the standard design.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(skip)]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_scenario: Option<SimScenario>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct IngestArgs {
    /// Three-column `pos_i pos_j count` file, optionally gzipped.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub chrom_length: u64,
    #[arg(long)]
    pub resolution: u64,
    /// Positions are bin midpoints rather than bin starts.
    #[arg(long)]
    pub midpoint: bool,
    /// Also write the binned matrix with this many bins.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize, PartialEq)]
pub struct ReplayArgs {
    /// A `report.json` written by an earlier run.
    #[arg(long)]
    pub report: PathBuf,
}

/// Everything that determines a run. Unset stopping rules take the defaults
/// of the balancer in use.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub command: Command,
}

impl RunConfig {
    pub fn matrix_config(&self) -> kbal::BalanceConfig {
        self.resolve(kbal::BalanceConfig::default())
    }

    pub fn kernel_config(&self) -> kbal::BalanceConfig {
        self.resolve(kbal::BalanceConfig::kernel())
    }

    fn resolve(&self, base: kbal::BalanceConfig) -> kbal::BalanceConfig {
        kbal::BalanceConfig::new(self.tol.unwrap_or(base.tol), self.max_iter.unwrap_or(base.max_iter))
    }
}
