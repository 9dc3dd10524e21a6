use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qovae_core::analysis::Grouping;
use qovae_core::bayesopt::Metric;
use qovae_core::model::DecodeMode;

mod commands;
mod config;
mod error;
mod validate;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "qovae", version, about = "Generative design of quantum optics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample and label random setups into a dataset file.
    GenData(GenDataArgs),
    /// Simulate one setup and print its state and entanglement as JSON.
    Simulate(SimulateArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Decode prior samples into a labeled dataset.
    Sample(SampleArgs),
    /// Decode a spherical interpolation between two setups.
    Interpolate(InterpolateArgs),
    /// Latent coordinates of a dataset with color columns.
    LatentMap(LatentMapArgs),
    /// Latent distance against |dS| over random pairs.
    Distance(DistanceArgs),
    /// Compare generated and training datasets.
    Analyze(AnalyzeArgs),
    /// Bayesian optimization towards a target state.
    Bo(BoArgs),
    /// Check an output file against its schema.
    #[command(hide = true)]
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    /// Keep entangled setups with S strictly above this.
    #[arg(long)]
    pub s_min: Option<f64>,
    /// Keep entangled setups with S strictly below this.
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub ntp_min: usize,
    /// Fraction of entangled records; the rest are unentangled.
    #[arg(long)]
    pub mix: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to the number of available cores.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub max_draws: Option<u64>,
    /// Vocabulary and model config (TOML); only `[vocabulary]` is used here.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Stats JSON path; defaults to `<out>.stats.json`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub setup: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `model.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `model.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModeArg {
    Sample,
    Argmax,
}

impl From<ModeArg> for DecodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sample => DecodeMode::Sample,
            ModeArg::Argmax => DecodeMode::Argmax,
        }
    }
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Sample)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub from: String,
    #[arg(long)]
    pub to: String,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum GroupingArg {
    Kind,
    KindEmptyPath,
}

impl From<GroupingArg> for Grouping {
    fn from(g: GroupingArg) -> Self {
        match g {
            GroupingArg::Kind => Grouping::Kind,
            GroupingArg::KindEmptyPath => Grouping::KindEmptyPath,
        }
    }
}

#[derive(Args, Debug)]
pub struct LatentMapArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Two zero-based latent axes, e.g. `0,3`.
    #[arg(long, value_delimiter = ',')]
    pub axes: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = GroupingArg::Kind)]
    pub grouping: GroupingArg,
}

#[derive(Args, Debug)]
pub struct DistanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pair CSV; bins go to `<out>` with a `.bins.csv` suffix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub gen: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BoArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Target state file; defaults to the four-photon GHZ state.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    #[arg(long, default_value = "fidelity", value_parser = parse_metric)]
    pub metric: Metric,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub starts: usize,
    /// Largest GP training subsample.
    #[arg(long, default_value_t = 2000)]
    pub max_points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse()
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long, value_enum)]
    pub schema: validate::Schema,
    pub path: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Interpolate(a) => commands::interpolate(&a),
        Command::LatentMap(a) => commands::latent_map(&a),
        Command::Distance(a) => commands::distance(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Bo(a) => commands::bo(&a),
        Command::Validate(a) => validate::run(a.schema, &a.path),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail(&CliError::usage(e.render().to_string().trim_end()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
