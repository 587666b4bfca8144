use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "rfmark", version, about = "Receptive-field-aware blind image watermarking")]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Receptive-field tables and the admissible watermark window.
    Rf(RfArgs),
    /// Render a letter watermark set to PNG files plus a manifest.
    GenWatermarks(GenWatermarksArgs),
    /// Sample frames from a source and split off a held-out set.
    Ingest(IngestArgs),
    /// Pre-train an embedder/detector pair on clean frames.
    Train(TrainArgs),
    /// Continue training a checkpoint with sampled attacks.
    Finetune(FinetuneArgs),
    /// Watermark a single image.
    Embed(EmbedArgs),
    /// Identify the watermark in an image.
    Detect(DetectArgs),
    /// Apply one attack (or every attack) to an image.
    Attack(AttackArgs),
    /// Accuracy under each attack plus PSNR/SSIM on held-out frames.
    Evaluate(EvaluateArgs),
    /// Train and evaluate one model per watermark size.
    Sweep(SweepArgs),
    /// Render training curves and sweep results to PNG charts.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 1280x720 networks.
    Full,
    /// 128x128 networks for CPU-scale runs.
    #[default]
    Desk,
}

#[derive(Args, Debug, Default)]
pub struct RfArgs {
    /// JSON settings file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Frame size `WxH` the chains are evaluated on.
    #[arg(long)]
    pub input: Option<String>,
    /// Print JSON instead of tables.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug, Default)]
pub struct GenWatermarksArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Letters as `A..J`, `A-J` or `X,Y,Z`.
    #[arg(long)]
    pub letters: Option<String>,
    /// Watermark size `WxH` or `N`.
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct IngestArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generate procedural frames.
    #[arg(long, conflicts_with_all = ["images", "video"])]
    pub synthetic: bool,
    /// Directory of still images.
    #[arg(long, conflicts_with = "video")]
    pub images: Option<PathBuf>,
    /// Video file, decoded with ffmpeg.
    #[arg(long)]
    pub video: Option<PathBuf>,
    /// Where decoded video frames are kept.
    #[arg(long, requires = "video")]
    pub frames_dir: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Frame size `WxH` after resizing.
    #[arg(long)]
    pub resolution: Option<String>,
    /// Held-out share: a fraction below 1 or a frame count.
    #[arg(long)]
    pub heldout: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset manifest to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Optimizer and schedule flags shared by `train`, `finetune` and `sweep`.
#[derive(Args, Debug, Default, Clone)]
pub struct TrainingFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub gamma_imp: Option<f64>,
    #[arg(long)]
    pub gamma_det: Option<f64>,
    /// Epochs between held-out evaluations (0: only at the end).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Stop after this many held-out evaluations without improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub min_delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset manifest written by `ingest`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Watermark directory written by `gen-watermarks`.
    #[arg(long)]
    pub watermarks: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Run directory for the checkpoint, curves and summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Save the checkpoint every N epochs as well as at the end.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Args, Debug, Default)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub watermarks: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Attack pool, comma separated (identity is always kept).
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Load despite a watermark manifest mismatch.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Args, Debug, Default)]
pub struct EmbedArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub watermarks: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Watermark id, or its letter.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Resize the image to the network input instead of rejecting it.
    #[arg(long)]
    pub resize: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Default)]
pub struct DetectArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Optional watermark set used to name the detected letter.
    #[arg(long)]
    pub watermarks: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub image: Vec<PathBuf>,
    #[arg(long)]
    pub resize: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Default)]
pub struct AttackArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Attack kind, or `all`.
    #[arg(long)]
    pub kind: Option<String>,
    /// Watermarked image to attack.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Unwatermarked original (dropout).
    #[arg(long)]
    pub original: Option<PathBuf>,
    /// Second watermarked copy (collusion).
    #[arg(long)]
    pub partner: Option<PathBuf>,
    #[arg(long)]
    pub area: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub quality: Option<u8>,
    #[arg(long)]
    pub bits: Option<u8>,
    /// Output file, or directory for `--kind all`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub watermarks: Option<PathBuf>,
    /// Attacks to evaluate, comma separated, or `all`.
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report JSON path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `distortion,accuracy` rows to this CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug, Default)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Comma-separated sizes, each `WxH` or `N`.
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long)]
    pub letters: Option<String>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Attacks to evaluate, comma separated, or `all`.
    #[arg(long)]
    pub kinds: Option<String>,
    /// Fine-tuning epochs per size after pre-training (0 disables).
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Args, Debug, Default)]
pub struct ReportArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training curve CSV files.
    #[arg(long, num_args = 1..)]
    pub curves: Vec<PathBuf>,
    /// `sweep.json` written by `sweep`.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
