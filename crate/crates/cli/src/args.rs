use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "multitreat", version, about = "Pairwise treatment effects for multi-level treatments")]
pub struct Cli {
    /// JSON run configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for bootstrap and simulation (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Output directory.
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the score model and estimate every pairwise effect.
    Estimate(EstimateArgs),
    /// Trim units with poor overlap and write the trimmed sample.
    Trim(TrimArgs),
    /// Covariate and score balance diagnostics.
    Balance(BalanceArgs),
    /// Monte Carlo study on a built-in or custom design.
    Simulate(SimulateArgs),
    /// Draw one dataset from a design and write it as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Input CSV.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Treatment column.
    #[arg(long)]
    pub treatment: Option<String>,
    /// Outcome column.
    #[arg(long)]
    pub outcome: Option<String>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Column holding a constant-1 intercept.
    #[arg(long)]
    pub intercept_column: Option<String>,
    /// Treatment labels in the order used for level numbering.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<String>>,
    /// Field delimiter.
    #[arg(long)]
    pub delimiter: Option<char>,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    /// Ridge penalty for the score model.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrimFlags {
    /// Trim before estimating.
    #[arg(long)]
    pub trim: bool,
    /// Keep the original scores on the trimmed sample instead of refitting.
    #[arg(long)]
    pub no_refit: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub trim: TrimFlags,
    /// Estimators, comma separated (DIF, PPSM, PSSM, W, COV, GPSM, GPSS).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub ci_level: Option<f64>,
    #[arg(long)]
    pub bootstrap_reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub subclasses: Option<usize>,
    /// Floor for scores in the weighting estimator.
    #[arg(long)]
    pub clip: Option<f64>,
    /// Percentile bootstrap intervals for GPSM.
    #[arg(long)]
    pub gpsm_bootstrap: bool,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct TrimArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub no_refit: bool,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Also report balance on the trimmed sample.
    #[arg(long)]
    pub trim: bool,
    #[arg(long)]
    pub no_refit: bool,
    /// Histogram bins on [0, 1].
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// `design1`, `design2` or a JSON design file.
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bootstrap_reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub truth: Option<Truth>,
    /// Draw arm sizes at random with this total instead of fixed quotas.
    #[arg(long)]
    pub multinomial: Option<usize>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub gpsm_bootstrap: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub multinomial: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Truth {
    Superpopulation,
    ArmMixture,
    Sample,
}
