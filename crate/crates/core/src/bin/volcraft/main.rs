//! `volcraft` command line.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use volcraft::error::ErrorCategory;
use volcraft::VolError;

#[derive(Debug, Parser)]
#[command(
    name = "volcraft",
    version,
    about = "Train, complete, generate and check implied-volatility surfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert ATM / risk-reversal / butterfly quotes into grid surfaces.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus and write train/validation CSVs.
    GenData(GenDataArgs),
    /// Train a VAE on a surfaces CSV.
    Train(TrainArgs),
    /// Complete partially observed surfaces by latent calibration.
    Complete(CompleteArgs),
    /// Write encoder latent means for each surface.
    Encode(EncodeArgs),
    /// Decode surfaces from prior samples.
    Generate(GenerateArgs),
    /// Decode a line or bilinear lattice between latent corners.
    Interpolate(InterpolateArgs),
    /// Static-arbitrage report for surfaces or a decoded latent point.
    CheckArb(CheckArbArgs),
    /// Masked-completion benchmark across models and observation counts.
    BenchMask(BenchMaskArgs),
    /// Full-surface calibration error per asset, Heston against a VAE.
    BenchHeston(BenchHestonArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Quotes CSV.
    #[arg(long)]
    pub quotes: String,
    /// Output surfaces CSV.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Corpus spec JSON; the built-in five-asset corpus when omitted.
    #[arg(long)]
    pub spec: Option<String>,
    /// Directory receiving train.csv and validation.csv.
    #[arg(long)]
    pub out_dir: String,
    /// Seed for the built-in corpus (ignored with --spec).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training surfaces CSV.
    #[arg(long)]
    pub surfaces: String,
    #[arg(long, default_value_t = 4)]
    pub latent_dim: usize,
    /// KL weight.
    #[arg(long, default_value_t = 1e-6)]
    pub beta: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output model JSON.
    #[arg(long)]
    pub out: String,
    /// Calendar penalty weight.
    #[arg(long, default_value_t = 0.0)]
    pub lambda_cal: f64,
    /// Butterfly penalty weight.
    #[arg(long, default_value_t = 0.0)]
    pub lambda_but: f64,
    /// grid or pointwise.
    #[arg(long, default_value = "pointwise")]
    pub decoder: String,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "32,32")]
    pub hidden: String,
    /// Optional per-epoch loss trace CSV.
    #[arg(long)]
    pub trace: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub model: String,
    /// Observations CSV in the surfaces format; partial and off-grid points allowed.
    #[arg(long)]
    pub observations: String,
    /// Completed surfaces CSV.
    #[arg(long)]
    pub out: String,
    /// Calibration and arbitrage report JSON; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional ridge weight on ‖z‖².
    #[arg(long)]
    pub ridge: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub surfaces: String,
    /// Latent means CSV.
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: String,
    /// Number of surfaces.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generated surfaces CSV.
    #[arg(long)]
    pub out: String,
    /// Optional arbitrage report JSON for the generated surfaces.
    #[arg(long)]
    pub report: Option<String>,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub model: String,
    /// Two or four latent points separated by `;`, coordinates by `,`.
    /// Four corners are read as z00;z10;z01;z11.
    #[arg(long, allow_hyphen_values = true)]
    pub corners: String,
    /// Points per axis (at least 2).
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long)]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct CheckArbArgs {
    /// Surfaces CSV to check.
    #[arg(long, conflicts_with_all = ["model", "z"], required_unless_present = "model")]
    pub surfaces: Option<String>,
    /// Model JSON, decoded at --z.
    #[arg(long, requires = "z")]
    pub model: Option<String>,
    /// Latent point, comma separated.
    #[arg(long, requires = "model", allow_hyphen_values = true)]
    pub z: Option<String>,
    /// Report JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<String>,
    /// Nodes per axis of the dense check lattice.
    #[arg(long, default_value_t = 41)]
    pub resolution: usize,
    #[arg(long, default_value_t = volcraft::arbitrage::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct BenchMaskArgs {
    /// Model JSON files.
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<String>,
    /// Validation surfaces CSV.
    #[arg(long)]
    pub surfaces: String,
    /// Known-point counts, comma separated.
    #[arg(long, default_value = "5,10,20,40")]
    pub ks: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: String,
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    /// Use only the first N surfaces.
    #[arg(long)]
    pub max_surfaces: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchHestonArgs {
    #[arg(long)]
    pub surfaces: String,
    /// VAE compared against Heston; Heston only when omitted.
    #[arg(long)]
    pub model: Option<String>,
    /// Per-asset comparison CSV.
    #[arg(long)]
    pub out: String,
    /// Optional per-surface fit report JSON.
    #[arg(long)]
    pub report: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub heston_starts: usize,
    #[arg(long, default_value_t = 8)]
    pub vae_starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use only the first N surfaces.
    #[arg(long)]
    pub max_surfaces: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Vol(VolError),
}

impl From<VolError> for CliError {
    fn from(e: VolError) -> Self {
        CliError::Vol(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Vol(VolError::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Vol(VolError::Json(e))
    }
}

impl CliError {
    fn report(&self) -> (u8, serde_json::Value) {
        match self {
            CliError::Usage(m) => (2, json!({"error": {"kind": "usage", "message": m}})),
            CliError::Vol(e) => {
                let (code, kind) = match e.category() {
                    ErrorCategory::Data => (3, "data"),
                    ErrorCategory::Numerical => (4, "numerical"),
                };
                (
                    code,
                    json!({"error": {"kind": kind, "message": e.to_string()}}),
                )
            }
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("VOLCRAFT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "VOLCRAFT_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Complete(a) => commands::complete(&a),
        Command::Encode(a) => commands::encode(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Interpolate(a) => commands::interpolate(&a),
        Command::CheckArb(a) => commands::check_arb(&a),
        Command::BenchMask(a) => commands::bench_mask(&a),
        Command::BenchHeston(a) => commands::bench_heston(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let message = e.render().to_string();
            eprintln!(
                "{}",
                json!({"error": {"kind": "usage", "message": message.trim_end()}})
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, body) = e.report();
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
