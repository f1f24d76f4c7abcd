//! `trialsynth` command-line entry point.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "trialsynth",
    version,
    about = "Synthetic clinical trial generation and evaluation harness"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse registry XML and join outcome labels into a corpus file.
    Ingest(IngestArgs),
    /// Report drug interventions with enough successful and failed trials.
    Retrieve(RetrieveArgs),
    /// Generate synthetic trials through the reasoning and generation prompts.
    Generate(GenerateArgs),
    /// Build train/val/test split manifests for each seed.
    Split(SplitArgs),
    /// Aggregate prediction files into a metric report.
    Evaluate(EvaluateArgs),
    /// Cosine-similarity pairs and histograms over embedding files.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Directory of XML files or a .zip archive.
    #[arg(long)]
    xml: Option<PathBuf>,
    /// CSV of trial_id,label.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Output corpus file [default: <output>/corpus.jsonl].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Drug vocabulary, one name per line.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    min_successes: Option<usize>,
    #[arg(long)]
    min_failures: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    total: Option<usize>,
    #[arg(long)]
    per_intervention_cap: Option<usize>,
    /// balanced, alternate, success or failure.
    #[arg(long)]
    label_policy: Option<String>,
    /// Defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Mock fixture replacing the network.
    #[arg(long)]
    mock: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    InDistribution,
    Ratio,
    Generalization,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Experiments to build [default: all three].
    #[arg(long, value_enum)]
    kind: Vec<KindArg>,
    /// Comma-separated seeds; overrides the configured list.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    ratio_train_size: Option<usize>,
    #[arg(long)]
    ratio_eval_size: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Prediction CSVs of one configuration, one per seed.
    predictions: Vec<PathBuf>,
    /// Row name for the positional files.
    #[arg(long, default_value = "run")]
    name: String,
    /// Extra NAME=PATH prediction files; files sharing a name form one row.
    #[arg(long = "run", value_name = "NAME=PATH")]
    runs: Vec<String>,
    #[arg(long, default_value_t = trialsynth::metrics::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Report CSV [default: <output>/report.csv].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long, default_value_t = trialsynth::analysis::DEFAULT_PAIR_COUNT)]
    pairs: usize,
    #[arg(long, default_value_t = trialsynth::analysis::DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    init_logging(cli.verbose);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
