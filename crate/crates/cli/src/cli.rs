use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bonelayer", version, about = "Separate overlapping bones in radiographs into per-bone layers")]
pub struct Cli {
    /// Worker threads for batch commands (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a parametric joint phantom with its ground-truth layers.
    Phantom(PhantomArgs),
    /// Build an overlapped sample from an image with disjoint bone masks.
    Synthesize(SynthesizeArgs),
    /// Estimate the soft-tissue correction k.
    EstimateK(EstimateKArgs),
    /// Recover per-bone layers from an overlapped image.
    Separate(SeparateArgs),
    /// Compose an image from layer images.
    Reconstruct(ReconstructArgs),
    /// Compare two images (MSE, SSIM, PSNR).
    Metrics(MetricsArgs),
    /// Compare registration with and without layer separation.
    Regeval(RegevalArgs),
}

#[derive(Debug, Args)]
pub struct ImageInputs {
    /// Grayscale PNG, 8 or 16 bit.
    #[arg(long)]
    pub image: PathBuf,
    /// One binary mask per bone, in layer order.
    #[arg(long, num_args = 2.., required = true)]
    pub masks: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// JSON phantom description; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Rebuild the two-bone geometry at this side length.
    #[arg(long)]
    pub side: Option<usize>,
    /// End-to-end gap between the bones when rebuilding the geometry.
    #[arg(long, allow_hyphen_values = true)]
    pub gap: Option<f64>,
    #[arg(long)]
    pub texture_amplitude: Option<f64>,
    #[arg(long, env = "BONELAYER_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub input: ImageInputs,
    /// JSON shift specification; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub shift_min: Option<u32>,
    #[arg(long)]
    pub shift_max: Option<u32>,
    /// Accept samples whose shifted masks do not meet.
    #[arg(long)]
    pub allow_no_overlap: bool,
    #[arg(long, env = "BONELAYER_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateKArgs {
    #[command(flatten)]
    pub input: ImageInputs,
    /// Also write the result here, with a manifest beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[command(flatten)]
    pub input: ImageInputs,
    /// Soft-tissue correction; estimated from the image when omitted.
    #[arg(long)]
    pub k: Option<f64>,
    /// JSON separator settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub w_tv: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// One layer PNG per bone; pixels outside the matching mask are ignored.
    #[arg(long, num_args = 2.., required = true)]
    pub layers: Vec<PathBuf>,
    #[arg(long, num_args = 2.., required = true)]
    pub masks: Vec<PathBuf>,
    #[arg(long)]
    pub k: f64,
    /// Output PNG (16 bit).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Restrict MSE/PSNR to the mask and SSIM to windows centered on it.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Also write the result here, with a manifest beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegevalArgs {
    /// Directory of saved trials (one subdirectory each).
    #[arg(long, conflicts_with = "generate", required_unless_present = "generate")]
    pub trials: Option<PathBuf>,
    /// Number of trials to generate.
    #[arg(long)]
    pub generate: Option<usize>,
    #[arg(long, env = "BONELAYER_SEED")]
    pub seed: Option<u64>,
    /// JSON with optional `trials` and `separator` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Save generated trials here.
    #[arg(long, requires = "generate")]
    pub save_trials: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-bone CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}
