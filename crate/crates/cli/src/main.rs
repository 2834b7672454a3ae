mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdgp_core::Error;

#[derive(Parser, Debug)]
#[command(name = "tdgp", version, about = "Timing-driven analytical FPGA global placement")]
struct Cli {
    /// Seed for generators, dataset splits and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with optional `placer`, `model`, `train` and `synth` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run timing-driven global placement.
    Place(PlaceArgs),
    /// Static timing analysis of a placed design.
    Sta(StaArgs),
    /// Train the delay model on extracted datasets.
    Train(TrainArgs),
    /// Extract labelled pin-pair datasets from a placed design.
    Extract(ExtractArgs),
    /// Generate a synthetic design, device and delay oracle.
    Synth(SynthArgs),
    /// Summarize a placement trace and plot its convergence.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DesignArgs {
    #[arg(long)]
    pub netlist: PathBuf,
    #[arg(long)]
    pub device: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct DelayArgs {
    /// Trained model weights (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Synthetic oracle file, used as the delay model.
    #[arg(long, conflicts_with = "model")]
    pub oracle: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlaceArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[command(flatten)]
    pub delay: DelayArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Required time in ns; derived from the critical path delay when omitted.
    #[arg(long)]
    pub clock_period: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value = "placement.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StaArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[command(flatten)]
    pub delay: DelayArgs,
    #[arg(long)]
    pub placement: PathBuf,
    #[arg(long)]
    pub clock_period: Option<f64>,
    /// Report file; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Held-out split scored against the linear baseline after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Drop the net-topology encoder.
    #[arg(long)]
    pub no_topology: bool,
    /// Also write predictions of the test split as CSV (pred,truth).
    #[arg(long, requires = "test")]
    pub predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[arg(long)]
    pub placement: PathBuf,
    /// Oracle labelling every pin pair.
    #[arg(long, required_unless_present = "delays")]
    pub oracle: Option<PathBuf>,
    /// External labels as `net,load,delay` CSV.
    #[arg(long, conflicts_with = "oracle")]
    pub delays: Option<PathBuf>,
    /// Directory receiving train.jsonl, val.jsonl and test.jsonl.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Prefix of sample net keys, to keep several designs apart.
    #[arg(long, default_value = "")]
    pub prefix: String,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub cells: usize,
    #[arg(long, default_value = "netlist.json")]
    pub out_netlist: PathBuf,
    #[arg(long, default_value = "device.json")]
    pub out_device: PathBuf,
    #[arg(long, default_value = "oracle.json")]
    pub out_oracle: PathBuf,
    /// Oracle coefficients a0,a1,a2,a3,a4.
    #[arg(long, value_delimiter = ',')]
    pub coefficients: Option<Vec<f64>>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Timing report from `sta`, summarized alongside the trace.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    /// Directory for the SVG plots.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Core(Error::Numerical(_)) => 3,
            Failure::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let kind = match f.code() {
                1 => "usage",
                3 => "numerical",
                _ => "validation",
            };
            eprintln!("{}", serde_json::json!({ "error": kind, "message": f.to_string() }));
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    let config = commands::Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Place(a) => commands::place(&a, &config),
        Command::Sta(a) => commands::sta(&a, &config),
        Command::Train(a) => commands::train(&a, &config, cli.seed),
        Command::Extract(a) => commands::extract(&a, &config, cli.seed),
        Command::Synth(a) => commands::synth(&a, &config, cli.seed),
        Command::Report(a) => report::report(&a),
    }
}
