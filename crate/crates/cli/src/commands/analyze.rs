//! `mexdet analyze`: region-quality and expert-specialization tables for
//! one split:
//!
//! * `recall_curve.csv` — best-region recall per IoU threshold;
//! * `iou_hist.csv` — histogram of each region's best IoU with ground
//!   truth;
//! * `per_expert.csv` — AP per class with every region forced through a
//!   single expert, one row per expert.

use std::collections::BTreeMap;

use mexdet_core::eval::{default_recall_thresholds, iou_histogram, per_expert_eval, recall_curve};
use mexdet_core::geometry::BBox;
use mexdet_core::network::load_weights;
use mexdet_core::proposals::load_proposals;

use crate::args::AnalyzeArgs;
use crate::commands::{load_dataset, Ctx};
use crate::config::{base_config, write_manifest, AnalyzeCmdConfig};
use crate::errors::{CliError, CliResult};
use crate::report::{write_iou_hist, write_per_expert, write_recall_curve};

pub fn resolve(ctx: &Ctx, args: &AnalyzeArgs) -> CliResult<AnalyzeCmdConfig> {
    let mut cfg: AnalyzeCmdConfig = base_config(ctx.config.as_deref(), "analyze")?;
    if let Some(p) = &args.dataset {
        cfg.dataset = p.clone();
    }
    if let Some(s) = &args.split {
        cfg.split = crate::config::parse_split(s)?;
    }
    if let Some(p) = &args.proposals {
        cfg.proposals = p.clone();
    }
    if let Some(p) = &args.weights {
        cfg.weights = p.clone();
    }
    if let Some(v) = args.iou {
        cfg.iou = v;
    }
    if let Some(v) = args.bins {
        cfg.bins = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(ctx: &Ctx, args: &AnalyzeArgs) -> CliResult<()> {
    let cfg = resolve(ctx, args)?;
    let out = ctx.ensure_out_dir()?;
    let ds = load_dataset(&cfg.dataset)?;

    let names = ds.config.class_names();
    let net = load_weights(&cfg.weights)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.weights.display())))?;
    if net.config.num_classes != names.len() {
        return Err(CliError::Data(format!(
            "weights model {} classes but the dataset has {}",
            net.config.num_classes,
            names.len()
        )));
    }

    let sets = load_proposals(&cfg.proposals, &ds.extents(cfg.split))
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.proposals.display())))?;
    let boxes: BTreeMap<String, Vec<BBox>> = sets
        .into_iter()
        .map(|(id, s)| (id, s.boxes))
        .collect();
    let anns: Vec<_> = ds
        .split_annotations(cfg.split)
        .into_iter()
        .cloned()
        .collect();

    let recall = recall_curve(&boxes, &anns, &default_recall_thresholds());
    write_recall_curve(&out.join("recall_curve.csv"), &recall)?;

    let hist = iou_histogram(&boxes, &anns, cfg.bins);
    write_iou_hist(&out.join("iou_hist.csv"), &hist)?;

    let runs = per_expert_eval(&net, &ds.images, &boxes, &anns, &cfg.detect, cfg.iou)?;
    write_per_expert(&out.join("per_expert.csv"), &runs, &names)?;

    write_manifest(&out, "analyze", &cfg)?;

    let r50 = recall
        .iter()
        .find(|p| (p.iou - 0.5).abs() < 1e-12)
        .map(|p| p.recall);
    println!(
        "analyzed {} images: recall@0.5 {} ({})",
        boxes.len(),
        r50.map(|r| format!("{r:.4}")).unwrap_or_else(|| "-".into()),
        out.display()
    );
    Ok(())
}
