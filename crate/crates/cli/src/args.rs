use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "psr-kit", version = crate::version_string(), about = "Multi-view correlation analysis of speech representations")]
pub struct Cli {
    /// TOML file with `[mel]`, `[gcca]`, `[dgcca]`, `[psr]` and `[layer_fit]`
    /// sections; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every randomized stage (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Emit log records as JSON lines on stderr.
    #[arg(long, global = true)]
    pub json_logs: bool,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Log-Mel features for every WAV in a directory.
    MelExtract(MelExtractArgs),
    /// Closed-form linear GCCA over manifest views.
    Gcca(GccaArgs),
    /// Train deep GCCA networks.
    DgccaTrain(DgccaTrainArgs),
    /// Phonetic-syntax ratio report.
    Psr(PsrArgs),
    /// Fit layer-aggregation weights against a target view.
    LayerFit(LayerFitArgs),
    /// Tabulate layer weights.
    LayerReport(LayerReportArgs),
    /// Levenshtein distances between word lists.
    Lingdist(LingdistArgs),
    /// Check a manifest and every feature file it references.
    ValidateManifest(ValidateManifestArgs),
}

#[derive(Debug, Args)]
pub struct MelExtractArgs {
    #[arg(long)]
    pub wav_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// View name recorded in the generated manifest.
    #[arg(long, default_value = "mel")]
    pub view: String,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub win_length: Option<usize>,
    #[arg(long)]
    pub hop_length: Option<usize>,
    #[arg(long)]
    pub n_fft: Option<usize>,
    #[arg(long)]
    pub n_mels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GccaArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated view names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub views: Vec<String>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Solution JSON; `G` and per-view `U` PSRF files are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

/// Training overrides shared by `dgcca-train` and `psr`.
#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Early-stopping window in epochs; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DgccaTrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub views: Vec<String>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Layer weights (JSON from `layer-fit`) for the `--stack-view` view.
    #[arg(long, requires = "stack_view")]
    pub layer_weights: Option<PathBuf>,
    /// View whose files are `L x T x D` layer stacks.
    #[arg(long, requires = "layer_weights")]
    pub stack_view: Option<String>,
    /// Per-epoch objective as CSV.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PsrArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ssl_view: String,
    #[arg(long)]
    pub mel_view: String,
    #[arg(long)]
    pub text_view: String,
    /// Train separate ssl/mel and ssl/text models instead of one joint model.
    #[arg(long)]
    pub pairwise_runs: bool,
    #[arg(long)]
    pub eps_floor: Option<f64>,
    /// Layer weights for an ssl view stored as layer stacks.
    #[arg(long)]
    pub layer_weights: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Per-utterance scores as CSV.
    #[arg(long)]
    pub scores_csv: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LayerFitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub stack_view: String,
    #[arg(long)]
    pub target_view: String,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Fitted weights as a plot-ready CSV.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LayerReportArgs {
    /// `weights.json` from `layer-fit`, or a `.psrm` model with embedded weights.
    #[arg(long)]
    pub weights: PathBuf,
    /// Layer labels: `0..L-1`-style range or comma-separated list.
    #[arg(long)]
    pub labels: Option<String>,
    /// Which embedded weight set to report when a model holds several.
    #[arg(long)]
    pub view: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Ldn,
    Ldnd,
}

#[derive(Debug, Args)]
pub struct LingdistArgs {
    /// Two or more `concept_id<TAB>word` files.
    #[arg(long, num_args = 2.., required = true)]
    pub lists: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "ldnd")]
    pub metric: Metric,
    /// Lowercase words before comparing.
    #[arg(long)]
    pub fold_case: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateManifestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
