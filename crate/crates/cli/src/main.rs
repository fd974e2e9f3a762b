//! `heavytail`: fit, simulate, VaR, goodness-of-fit, simulation studies and
//! plot data for heavy-tailed loss models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heavytail_core::Error as CoreError;

#[derive(Parser, Debug)]
#[command(name = "heavytail", version, about = "Heavy-tailed loss models: static lognormal-GPD mixture and baselines")]
pub struct Cli {
    /// Master seed for every randomized step [env: HEAVYTAIL_SEED]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model to a loss column and write a JSON report
    Fit(FitArgs),
    /// Draw a sample from a model and write it as CSV
    Simulate(SimulateArgs),
    /// Value-at-Risk with optional bootstrap standard errors
    Var(VarArgs),
    /// KS and AD tests with parametric-bootstrap p-values
    Gof(GofArgs),
    /// Run a simulation study described by a JSON spec
    Bench(BenchArgs),
    /// Export fitted densities on a log-spaced grid, with histogram bins
    Plotdata(PlotArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Static lognormal-GPD mixture fitted by EM
    Static,
    /// Composite lognormal-Pareto
    Case1,
    /// Cauchy-weighted dynamic lognormal-GPD mixture
    Case2,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// CSV file with one numeric loss column (header optional)
    #[arg(long)]
    pub input: PathBuf,
    /// Column name or zero-based index
    #[arg(long, default_value = "0")]
    pub column: String,
}

#[derive(Args, Debug, Clone)]
pub struct EmArgs {
    /// EM stopping tolerance on the largest parameter change
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// EM iteration cap
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "static")]
    pub model: ModelKind,
    #[command(flatten)]
    pub em: EmArgs,
    /// Non-parametric bootstrap replicates for standard errors (0 = off)
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Output file (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "static")]
    pub model: ModelKind,
    /// Comma-separated name=value pairs, e.g. p=0.9,mu=0,sigma2=0.25,xi=0.5,beta=3.5
    #[arg(long)]
    pub params: String,
    /// Number of draws
    #[arg(long)]
    pub n: usize,
    /// Header of the output column
    #[arg(long, default_value = "loss")]
    pub column: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VarArgs {
    /// Raw data to fit; either this or --fit is required
    #[arg(long, required_unless_present = "fit", conflicts_with = "fit")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "0")]
    pub column: String,
    /// Fit report written by `heavytail fit`
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "static")]
    pub model: ModelKind,
    #[command(flatten)]
    pub em: EmArgs,
    /// Comma-separated VaR levels in (0, 1)
    #[arg(long, default_value = "0.95,0.99,0.995", value_delimiter = ',')]
    pub levels: Vec<f64>,
    /// Monte Carlo draws per VaR evaluation
    #[arg(long, default_value_t = 10_000)]
    pub mc_reps: usize,
    /// Invert the model CDF instead of simulating
    #[arg(long)]
    pub exact: bool,
    /// Bootstrap replicates for standard errors and intervals (0 = off; needs --input)
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct GofArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "static")]
    pub model: ModelKind,
    #[command(flatten)]
    pub em: EmArgs,
    /// Parametric-bootstrap replicates
    #[arg(long, default_value_t = 200)]
    pub n_boot_gof: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// JSON simulation-study spec
    #[arg(long)]
    pub spec: PathBuf,
    /// Use 1000 replications regardless of the spec
    #[arg(long)]
    pub full: bool,
    /// Also time each estimator serially over the replications
    #[arg(long)]
    pub timing: bool,
    /// Directory for params.csv and var.csv tables
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// JSON summary output (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fit report to plot; the data are refitted when absent
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "static")]
    pub model: ModelKind,
    #[command(flatten)]
    pub em: EmArgs,
    /// Number of grid points
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    /// The report was written but the fit did not converge.
    NotConverged,
    Estimation(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::NotConverged | Failure::Estimation(_) => 3,
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Parameter { .. } | CoreError::Probability(_) => Failure::Usage(e.to_string()),
            CoreError::Data(_) | CoreError::DegenerateSupport { .. } | CoreError::Initialization(_) => {
                Failure::Data(e.to_string())
            }
            _ => Failure::Estimation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Data(m) => eprintln!("data error: {m}"),
                Failure::Estimation(m) => eprintln!("estimation failed: {m}"),
                Failure::NotConverged => eprintln!("warning: fit did not converge; report written with converged=false"),
            }
            ExitCode::from(f.code())
        }
    }
}
