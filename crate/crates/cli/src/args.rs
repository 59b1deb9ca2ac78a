//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sacropipe_core::train::Variant;
use sacropipe_core::Error;

#[derive(Parser)]
#[command(
    name = "sacropipe",
    version,
    about = "Anatomy-aware pelvic-radiograph classification pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Generate a synthetic phantom corpus with ground-truth masks
    Generate(GenerateArgs),
    /// Train the segmentation U-Net
    TrainSeg(TrainSegArgs),
    /// Predict (or copy ground-truth) segmentation masks for a manifest
    Segment(SegmentArgs),
    /// Locate the SIJs on predicted masks and write crops
    Crop(CropArgs),
    /// Train the classifier (standard, anatomy-aware, or both)
    TrainClf(TrainClfArgs),
    /// Pick the balanced-accuracy-optimal cut-off on a validation set
    CalibrateCutoff(CalibrateArgs),
    /// Score a test manifest and write the full evaluation report
    Evaluate(EvaluateArgs),
    /// Paired comparison of the two variants (DeLong + McNemar)
    Compare(CompareArgs),
    /// Progression-ratio analysis of confident false positives
    Followup(FollowupArgs),
    /// Grad-CAM heatmaps and overlays for manifest samples
    Explain(ExplainArgs),
    /// Bundle reports: JSON summary, metrics CSV, ROC SVG, overlays
    Report(ReportArgs),
}

/// Variant selector allowing `both` where training supports it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantSel {
    One(Variant),
    Both,
}

impl VariantSel {
    pub fn expand(self) -> Vec<Variant> {
        match self {
            VariantSel::One(v) => vec![v],
            VariantSel::Both => vec![Variant::Standard, Variant::AnatomyAware],
        }
    }
}

impl std::str::FromStr for VariantSel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        if s == "both" {
            Ok(VariantSel::Both)
        } else {
            s.parse().map(VariantSel::One)
        }
    }
}

impl std::fmt::Display for VariantSel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VariantSel::One(v) => v.fmt(f),
            VariantSel::Both => f.write_str("both"),
        }
    }
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Corpus config (TOML); defaults are used when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config file
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainSegArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// U-Net checkpoint; required unless --use-ground-truth
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Copy the generator's truth masks instead of running the model
    #[arg(long)]
    pub use_ground_truth: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CropArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Substitute the full image when SIJ localization fails
    #[arg(long)]
    pub fallback_full: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainClfArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// standard | anatomy_aware | both
    #[arg(long, default_value = "both")]
    pub variant: VariantSel,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// Validation manifest used to pick the cut-off
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "standard")]
    pub variant: Variant,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "standard")]
    pub variant: Variant,
    /// Calibration file from `calibrate-cutoff`
    #[arg(long)]
    pub cutoff_file: PathBuf,
    #[arg(long, default_value = "test")]
    pub dataset: String,
    /// Bootstrap replicates for the confidence intervals
    #[arg(long, default_value_t = 2000)]
    pub bootstrap: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub standard_checkpoint: PathBuf,
    #[arg(long)]
    pub anatomy_checkpoint: PathBuf,
    #[arg(long)]
    pub standard_cutoff_file: PathBuf,
    #[arg(long)]
    pub anatomy_cutoff_file: PathBuf,
    #[arg(long, default_value = "test")]
    pub dataset: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FollowupArgs {
    /// Predictions file from `evaluate`
    #[arg(long)]
    pub predictions: PathBuf,
    /// Follow-up manifest (baseline and follow-up labels)
    #[arg(long)]
    pub followup: PathBuf,
    /// Confidence threshold for the confident-FP group
    #[arg(long, default_value_t = 0.7)]
    pub conf_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "standard")]
    pub variant: Variant,
    /// Target convolutional stage (defaults to the last stage)
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub target_class: usize,
    /// Comma-separated sample ids; all (up to --max-samples) if omitted
    #[arg(long)]
    pub samples: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub max_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Evaluation report JSON files (repeatable)
    #[arg(long)]
    pub eval: Vec<PathBuf>,
    #[arg(long)]
    pub comparison: Option<PathBuf>,
    #[arg(long)]
    pub followup: Option<PathBuf>,
    /// Directory of Grad-CAM overlay PNGs to copy into the bundle
    #[arg(long)]
    pub overlay_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
