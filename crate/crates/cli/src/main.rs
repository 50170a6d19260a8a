use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod output;

use config::ConfigFile;

/// Robust variance estimation for linear regression under spherically
/// symmetric errors.
#[derive(Debug, Parser)]
#[command(name = "steinvar", version, about)]
pub struct Cli {
    /// Flat `key = value` file supplying defaults for any long flag.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads for simulation (default: available parallelism).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Format as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Variance estimates for a CSV of rows `y, x_1, ..., x_p`.
    Estimate(EstimateArgs),
    /// Tabulate shrinkage factors over a grid of R^2.
    PhiTable(PhiTableArgs),
    /// Monte Carlo risk under Stein's loss, single or paired.
    RiskSim(RiskSimArgs),
    /// Run numerical self-checks and print a JSON report.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Estimator specs (u, stein, bz, gb:a=2, h, sbstar); repeat or separate with commas.
    #[arg(long, value_delimiter = ',', value_name = "SPEC")]
    pub estimator: Vec<String>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhiTableArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Shrinkage orders, comma separated (default 2).
    #[arg(long, value_name = "LIST")]
    pub a: Option<String>,
    #[arg(long, value_name = "N")]
    pub grid_size: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RiskSimArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, value_name = "SPEC", conflicts_with_all = ["baseline", "challenger"])]
    pub estimator: Option<String>,
    #[arg(long, value_name = "SPEC", requires = "challenger")]
    pub baseline: Option<String>,
    #[arg(long, value_name = "SPEC", requires = "baseline")]
    pub challenger: Option<String>,
    /// normal, t:<nu>, or two:v1=<v>,v2=<v>[,w=<w>].
    #[arg(long, value_name = "LAW")]
    pub mixing: Option<String>,
    /// Noncentrality grid, comma separated (default 0,1,4,16,64,256).
    #[arg(long, value_name = "LIST")]
    pub xi: Option<String>,
    #[arg(long, value_name = "N")]
    pub replicates: Option<usize>,
    /// Master seed (default: $STEINVAR_SEED, else drawn from entropy).
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV of the risk curve.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// JSON report.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Refuse challengers that are not monotone shrinkage-form estimators.
    #[arg(long)]
    pub certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Level as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    InvertPhi,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub level: Option<Level>,
    /// Multiplies every check tolerance.
    #[arg(long, value_name = "X")]
    pub tolerance_scale: Option<f64>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Internal(String),
    Verification(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io(_) => 2,
            CliError::Internal(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) | CliError::Verification(m) | CliError::Io(m) => m,
        }
    }
}

/// Global settings after merging the config file.
#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub format: Format,
}

fn run(mut cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    cfg.fill(&mut cli.threads, "threads")?;
    cfg.fill(&mut cli.format, "format")?;
    let globals = Globals { format: cli.format.unwrap_or(Format::Csv) };

    let job = commands::prepare(cli.command, &mut cfg, globals)?;
    cfg.finish()?;

    match cli.threads {
        None => job.run(),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?
            .install(|| job.run()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
