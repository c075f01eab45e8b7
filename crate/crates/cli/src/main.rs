//! `ctgru`: generate synthetic event-sequence data, train and evaluate GRU
//! and CT-GRU models, and run the numerical checks.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "ctgru",
    version,
    about = "GRU and continuous-time GRU models for event sequences"
)]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write train/test files for a synthetic task plus a stats report.
    Generate(GenerateArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a sequence file and emit metrics CSV.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Half-life and decay curves of a timescale bank, as CSV.
    AnalyzeScales(AnalyzeArgs),
    /// Check that a two-scale CT-GRU reproduces a GRU.
    Equivalence(EquivalenceArgs),
    /// Relabel each sequence by order of first appearance.
    Reindex(ReindexArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// working-memory, cluster, remembering, rhythm, hawkes or disperse.
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value_t = 10_000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives train.seq, test.seq and stats.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Hawkes excitation weight.
    #[arg(long)]
    pub hawkes_alpha: Option<f64>,
    /// Hawkes base rate.
    #[arg(long)]
    pub hawkes_mu: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML config: `arch` plus any training options.
    #[arg(long)]
    pub config: PathBuf,
    /// Training sequence file, or a directory holding train.seq.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path; the per-epoch log goes to `<out>.run.jsonl` and the
    /// final summary to `<out>.summary.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional test file evaluated after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sequence file to score.
    #[arg(long)]
    pub data: PathBuf,
    /// Training file, used for the majority-class baseline.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// CSV destination (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// gru, gru-no-dt, ctgru or ctgru-no-decay; all four when absent.
    #[arg(long)]
    pub arch: Option<String>,
    /// label-softmax, polarity-logistic or sequence-logistic; all when absent.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 5)]
    pub vocab: usize,
    /// Number of bank scales for the CT-GRU variants.
    #[arg(long, default_value_t = 4)]
    pub scales: usize,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long, default_value_t = 0.5)]
    pub tau_min: f64,
    #[arg(long, default_value_t = 300.0)]
    pub tau_max: f64,
    /// Explicit comma-separated scales instead of the bounds.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Number of target time constants on the half-life curve.
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    /// Output prefix: writes `<out>-half-life.csv` and `<out>-decay.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EquivalenceArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub tau_short: f64,
    #[arg(long, default_value_t = 1e8)]
    pub tau_long: f64,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub vocab: usize,
    /// Lag between events.
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    /// Fail above this deviation. Defaults to 1e-6 with the default
    /// scales; other scales only report.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReindexArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Labels at or past this rank collapse onto the last one.
    #[arg(long)]
    pub cap: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::AnalyzeScales(a) => commands::analyze_scales(&a),
        Command::Equivalence(a) => commands::equivalence(&a),
        Command::Reindex(a) => commands::reindex(&a),
    };
    match result {
        Ok(commands::Outcome::Pass) => ExitCode::SUCCESS,
        Ok(commands::Outcome::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
