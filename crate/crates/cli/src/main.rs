use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protoest::datastore::Weighting;
use protoest::protonet::QueryMode;
use protoest::transforms::Method;
use serde::Serialize;

mod commands;
mod manifest;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_PARAMETER: u8 = 3;
pub const EXIT_SAMPLING: u8 = 4;
pub const EXIT_VERIFICATION: u8 = 5;

#[derive(Parser)]
#[command(name = "protoest", version, about = "Prototype classifiers, embedding transforms and accuracy bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Gaussian world config, optionally with sampled embeddings.
    GenWorld(GenWorldArgs),
    /// Fit an EST or PCA transform on an embeddings CSV.
    Fit(FitArgs),
    /// Episodic evaluation over a world config or an embeddings CSV.
    Eval(EvalArgs),
    /// Accuracy lower bound per shot, optionally with Monte Carlo accuracy.
    Bound(BoundArgs),
    /// Monte Carlo check of the α moment results.
    Verify(VerifyArgs),
    /// Variance ratio, intrinsic dimension and spectrum of an embeddings CSV.
    Diagnose(DiagnoseArgs),
    /// VC generalization gap.
    Vc(VcArgs),
}

#[derive(Args, Serialize)]
pub struct GenWorldArgs {
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub seed: u64,
    /// spherical:<v>, diag:<v1,..> or file:<path>
    #[arg(long, default_value = "spherical:1")]
    pub sigma_spec: String,
    #[arg(long, default_value = "spherical:1")]
    pub sigma_c_spec: String,
    /// Global mean, comma separated; zero if omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub mu: Option<Vec<f64>>,
    #[arg(long, default_value = "world.json")]
    pub out: PathBuf,
    #[arg(long, requires = "points_per_class")]
    pub classes: Option<usize>,
    #[arg(long, requires = "classes")]
    pub points_per_class: Option<usize>,
    #[arg(long, default_value = "embeddings.csv")]
    pub csv_out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "est")]
    pub method: Method,
    #[arg(long, default_value_t = protoest::transforms::DEFAULT_RHO)]
    pub rho: f64,
    #[arg(long, default_value_t = protoest::transforms::DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long, default_value = "equal-class")]
    pub weighting: Weighting,
    #[arg(long, default_value = "transform.json")]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct EvalArgs {
    /// World config (.json) or embeddings CSV.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub ways: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub shots: Vec<usize>,
    #[arg(long, default_value_t = protoest::protonet::DEFAULT_QUERIES)]
    pub queries: usize,
    #[arg(long, default_value = "per-class")]
    pub query_mode: QueryMode,
    #[arg(long, default_value_t = protoest::protonet::DEFAULT_EPISODES)]
    pub episodes: usize,
    #[arg(long)]
    pub transform: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Thread count; affects wall-clock only.
    #[arg(long)]
    #[serde(skip)]
    pub workers: Option<usize>,
    /// Output prefix: writes <out>.json, <out>.csv and <out>.table.csv.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Model name for the table row; derived from the transform if omitted.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value = "")]
    pub training_shots: String,
}

#[derive(Args, Serialize)]
pub struct BoundArgs {
    #[arg(long, conflicts_with = "moments_from", required_unless_present = "moments_from")]
    pub world_config: Option<PathBuf>,
    /// Estimate the moments from an embeddings CSV instead.
    #[arg(long)]
    pub moments_from: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub ways: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub shots: Vec<usize>,
    #[arg(long)]
    pub mc_episodes: Option<usize>,
    #[arg(long, default_value_t = protoest::protonet::DEFAULT_QUERIES)]
    pub queries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix: writes <out>.csv and <out>.json.
    #[arg(long, default_value = "bound")]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub world_config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale every closed form by (1 + perturb); a negative control.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub perturb: f64,
    #[arg(long, default_value = "verify.json")]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = protoest::datastore::DEFAULT_ID_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = "equal-class")]
    pub weighting: Weighting,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct VcArgs {
    #[arg(long)]
    pub vc_dim: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: f64,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<protoest::Error> for Failure {
    fn from(e: protoest::Error) -> Self {
        use protoest::Error as E;
        let code = match e {
            E::DimensionTooLarge { .. } | E::InvalidParameter(_) => EXIT_PARAMETER,
            E::InsufficientClasses { .. } | E::InsufficientSamplesPerClass { .. } => EXIT_SAMPLING,
            _ => EXIT_INPUT,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_INPUT, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenWorld(a) => commands::gen_world(a),
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bound(a) => commands::bound(a),
        Command::Verify(a) => commands::verify(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Vc(a) => commands::vc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
