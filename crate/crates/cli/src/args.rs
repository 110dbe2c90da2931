use std::path::PathBuf;

use cicada_core::datagen::GenKind;
use cicada_core::pipeline::ThresholdStrategy;
use cicada_core::ExpertKind;
use clap::{Args, Parser, Subcommand};

pub const OUT_DIR_ENV: &str = "CICADA_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "cicada", version, about = "Cross-domain mixture-of-experts anomaly detection")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with `[generate]` and `[run]` tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,
    /// Default directory for outputs when `--out` is absent.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic series as CSV.
    Generate(GenerateArgs),
    /// Train a model and write it with its training history.
    Train(TrainArgs),
    /// Score a series with a trained model.
    Detect(DetectArgs),
    /// Compute detection metrics for any score CSV.
    Evaluate(EvaluateArgs),
    /// Render SVG charts and a metric summary.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub kind: Option<GenKind>,
    /// Series length.
    #[arg(long = "T")]
    pub length: Option<usize>,
    /// Block length of the tensor generator.
    #[arg(long = "L")]
    pub window: Option<usize>,
    /// Number of latent series.
    #[arg(long = "p")]
    pub latent: Option<usize>,
    /// Number of observed variables.
    #[arg(long = "d")]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Comma-separated domain fractions, e.g. 0.5,0.5.
    #[arg(long, value_delimiter = ',')]
    pub domains: Option<Vec<f64>>,
    /// Four domains of 31.25%, 31.25%, 31.25% and 6.25%.
    #[arg(long, conflicts_with = "domains")]
    pub four_domain: bool,
    /// Fraction of eligible steps that receive a spike.
    #[arg(long)]
    pub anomaly_rate: Option<f64>,
    /// Spike size in per-variable standard deviations.
    #[arg(long)]
    pub anomaly_magnitude: Option<f64>,
    /// Spikes only from this fraction of the series onward.
    #[arg(long)]
    pub anomaly_start: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training series CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub run: RunOverrides,
}

#[derive(Debug, Args)]
pub struct RunOverrides {
    /// Window length L.
    #[arg(long)]
    pub window: Option<usize>,
    /// Number of training segments N.
    #[arg(long)]
    pub segments: Option<usize>,
    /// Comma-separated expert kinds.
    #[arg(long, value_delimiter = ',')]
    pub experts: Option<Vec<ExpertKind>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub epoch_add: Option<usize>,
    /// Keep one meta-domain per expert.
    #[arg(long)]
    pub no_expansion: bool,
    #[arg(long)]
    pub lambda_1: Option<f64>,
    #[arg(long)]
    pub lambda_meta: Option<f64>,
    #[arg(long)]
    pub alpha_threshold: Option<f64>,
    #[arg(long)]
    pub test_rate: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub windows_per_step: Option<usize>,
    #[arg(long)]
    pub threshold_strategy: Option<ThresholdStrategy>,
    #[arg(long)]
    pub standardize: Option<bool>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Series to score.
    #[arg(long)]
    pub data: PathBuf,
    /// `max-f1` or `percentile:q`; defaults to the model's setting.
    #[arg(long)]
    pub threshold_strategy: Option<ThresholdStrategy>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Score CSV; an optional `t` column aligns rows with label rows.
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV whose `label` column holds the ground truth.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value = "anosc")]
    pub score_column: String,
    /// Fixed decision threshold (score > threshold is anomalous).
    #[arg(long, conflicts_with = "max_f1")]
    pub threshold: Option<f64>,
    /// Pick the F1-maximizing threshold instead of the `y_pred` column.
    #[arg(long)]
    pub max_f1: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Report CSV written by `detect`.
    #[arg(long, requires = "labels")]
    pub detection: Option<PathBuf>,
    /// Labelled series for the detection summary.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}
