mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ctlpv_core::ecm_sim::ProfileKind;

/// Identify SOC-dependent battery equivalent-circuit parameters from
/// current and voltage records.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Log progress (repeat for more detail)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the benchmark battery and write a dataset plus its true
    /// parameter curves
    Simulate(SimulateArgs),

    /// Identify the spline model from a dataset
    Identify(IdentifyArgs),

    /// Predict terminal voltage with an identified model
    Predict(PredictArgs),

    /// Run the windowed least-squares baseline
    Baseline(BaselineArgs),

    /// Compute RMSE and VAF between columns of two CSV files
    Evaluate(EvaluateArgs),
}

/// Settings shared by all commands. Flags override the config file, which
/// overrides the built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cell capacity in Ah
    #[arg(long)]
    pub capacity: Option<f64>,
    /// Initial SOC for simulation, coulomb counting and prediction
    #[arg(long)]
    pub z0: Option<f64>,
    /// Number of spline segments
    #[arg(long)]
    pub segments: Option<usize>,
    /// SVF cut-off in rad/s
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Four penalty weights, comma separated
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub lambdas: Option<Vec<f64>>,
    /// Standard deviation of the SOC perturbation
    #[arg(long)]
    pub perturb_sigma: Option<f64>,
    /// Use the perturbed SOC in every regressor block
    #[arg(long)]
    pub perturb_everywhere: bool,
    /// Samples discarded after filtering
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Baseline window lengths, comma separated
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
    /// Report RMSE with the m denominator
    #[arg(long)]
    pub rmse_conventional: bool,
    /// Report VAF relative to the variance of the measurement
    #[arg(long)]
    pub vaf_conventional: bool,
}

/// How dataset files are read.
#[derive(Args, Debug, Clone, Default)]
pub struct InputArgs {
    /// Column mapping, e.g. `t=time,i_b=current,v_b=voltage,z=soc`
    #[arg(long)]
    pub columns: Option<String>,
    /// The file counts discharge current as positive
    #[arg(long)]
    pub discharge_positive: bool,
    /// Resample irregular time stamps by zero-order hold
    #[arg(long)]
    pub resample: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Output dataset CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Output truth CSV [default: <out>_truth.csv]
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<ProfileKind>,
    /// Current scale in A
    #[arg(long)]
    pub amps: Option<f64>,
    /// Noise standard deviation on current and voltage
    #[arg(long)]
    pub noise: Option<f64>,
    /// Profile length in s
    #[arg(long)]
    pub duration: Option<f64>,
    /// Rest before the profile in s
    #[arg(long)]
    pub rest: Option<f64>,
    /// Sampling interval in s
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Args, Debug)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for model.json, curves.csv and report.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// True parameter curves for error metrics
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write the regression problem as a binary dump
    #[arg(long)]
    pub dump_problem: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Identified model JSON
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Prediction CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics JSON [default: <out>_metrics.json]
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[command(flatten)]
    pub input: InputArgs,
    /// Dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for per-window estimates and baseline.json
    #[arg(long)]
    pub out_dir: PathBuf,
    /// True parameter curves for error metrics
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Identified model to compare against
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// CSV holding the reference signal
    pub reference: PathBuf,
    /// CSV holding the estimate
    pub estimate: PathBuf,
    /// Reference column
    #[arg(long, default_value = "v_b")]
    pub column: String,
    /// Estimate column [default: same as --column]
    #[arg(long)]
    pub estimate_column: Option<String>,
    /// Write the metrics here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_profile(s: &str) -> Result<ProfileKind, String> {
    s.parse().map_err(|e: ctlpv_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Identify(args) => commands::identify(args),
        Command::Predict(args) => commands::predict(args),
        Command::Baseline(args) => commands::baseline(args),
        Command::Evaluate(args) => commands::evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
