//! Command-line grammar. Every value flag is optional here; defaults and
//! required-ness are settled during config resolution so that a `--config`
//! file (or a previous run's manifest) can supply any of them.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "mexdet",
    version,
    about = "Multi-expert detection pipeline on synthetic imagery",
    long_about = "Generate a synthetic dataset, produce candidate regions \
                  (sparse simulated proposals or a dense exhaustive grid), \
                  train the three-expert detector, run detection, and \
                  evaluate. Every command writes a manifest.json that \
                  reproduces the run byte-for-byte via --config."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config for the subcommand, or a previous run's manifest.json.
    /// Explicit flags override values from this file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override the command's random seed (where one applies).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-image stages. Any value produces the same
    /// bytes; 1 is the default.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Output directory; created if absent. Required by every command.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset (images + annotations).
    Synth(SynthArgs),
    /// Generate candidate regions for one split.
    GenRois(GenRoisArgs),
    /// Train the detector.
    Train(TrainArgs),
    /// Run detection with trained weights.
    Detect(DetectArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Proposal recall, IoU histogram, and per-expert comparison tables.
    Analyze(AnalyzeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::GenRois(_) => "gen-rois",
            Command::Train(_) => "train",
            Command::Detect(_) => "detect",
            Command::Eval(_) => "eval",
            Command::Analyze(_) => "analyze",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Training images to generate.
    #[arg(long)]
    pub train_count: Option<u32>,

    /// Test images to generate.
    #[arg(long)]
    pub test_count: Option<u32>,

    /// Image width in pixels.
    #[arg(long)]
    pub image_w: Option<u32>,

    /// Image height in pixels.
    #[arg(long)]
    pub image_h: Option<u32>,

    /// Replace a non-empty output directory instead of refusing.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenRoisArgs {
    /// Dataset directory (from `synth`).
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,

    /// Which split to generate for: train | test.
    #[arg(long)]
    pub split: Option<String>,

    /// simulate (sparse stand-in) | exhaustive (dense grid) | merge (both).
    #[arg(long)]
    pub mode: Option<String>,

    /// Corner jitter for simulated proposals, as a fraction of box size.
    #[arg(long)]
    pub jitter: Option<f64>,

    /// Random extra boxes per image for simulated proposals.
    #[arg(long)]
    pub random_count: Option<usize>,

    /// Permit dense (exhaustive) regions on the test split. Off by
    /// default: the dense grid is a training-time source.
    #[arg(long)]
    pub allow_dense_test: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (from `synth`).
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,

    /// Which candidate regions to train on: sparse | dense | combined.
    #[arg(long)]
    pub rois: Option<String>,

    /// Sparse proposal file (gen-rois, simulate mode).
    #[arg(long, value_name = "FILE")]
    pub sparse_rois: Option<PathBuf>,

    /// Dense proposal file (gen-rois, exhaustive mode).
    #[arg(long, value_name = "FILE")]
    pub dense_rois: Option<PathBuf>,

    /// 3 = shape-routed experts, 1 = single-head baseline.
    #[arg(long)]
    pub experts: Option<u8>,

    /// SGD iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Dataset directory (from `synth`).
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,

    /// Which split to detect on: train | test.
    #[arg(long)]
    pub split: Option<String>,

    /// Proposal file for that split.
    #[arg(long, value_name = "FILE")]
    pub proposals: Option<PathBuf>,

    /// Trained weights file.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,

    /// Per-class score floor.
    #[arg(long)]
    pub score_threshold: Option<f64>,

    /// Suppression IoU threshold.
    #[arg(long)]
    pub nms_iou: Option<f64>,

    /// Kept detections per class per image.
    #[arg(long)]
    pub max_per_class: Option<usize>,

    /// Force every region through one expert: h | s | v | none.
    #[arg(long)]
    pub forced_expert: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory (from `synth`).
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,

    /// Which split the detections cover: train | test.
    #[arg(long)]
    pub split: Option<String>,

    /// Detections CSV (from `detect`).
    #[arg(long, value_name = "FILE")]
    pub detections: Option<PathBuf>,

    /// IoU threshold for a detection to match ground truth.
    #[arg(long)]
    pub iou: Option<f64>,

    /// Also report mAP averaged over IoU 0.50:0.05:0.95.
    #[arg(long)]
    pub coco: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Dataset directory (from `synth`).
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,

    /// Which split to analyze: train | test.
    #[arg(long)]
    pub split: Option<String>,

    /// Proposal file for that split.
    #[arg(long, value_name = "FILE")]
    pub proposals: Option<PathBuf>,

    /// Trained weights file (for the per-expert table).
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,

    /// IoU threshold for the per-expert AP table.
    #[arg(long)]
    pub iou: Option<f64>,

    /// Bin count for the IoU histogram.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "mexdet", "synth", "--out", "d", "--seed", "9", "--threads", "4",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(9));
        assert_eq!(cli.threads, Some(4));
        assert_eq!(cli.out.as_deref(), Some(std::path::Path::new("d")));
        assert!(matches!(cli.command, Command::Synth(_)));
    }

    #[test]
    fn subcommand_names() {
        for (argv, name) in [
            (vec!["mexdet", "synth"], "synth"),
            (vec!["mexdet", "gen-rois"], "gen-rois"),
            (vec!["mexdet", "train"], "train"),
            (vec!["mexdet", "detect"], "detect"),
            (vec!["mexdet", "eval"], "eval"),
            (vec!["mexdet", "analyze"], "analyze"),
        ] {
            let cli = Cli::try_parse_from(argv).unwrap();
            assert_eq!(cli.command.name(), name);
        }
    }

    #[test]
    fn rejects_unknown_flag() {
        assert!(Cli::try_parse_from(["mexdet", "synth", "--bogus"]).is_err());
    }
}
