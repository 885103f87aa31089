//! `mexdet detect`: run the trained detector over one split's candidate
//! regions and write `detections.csv`.
//!
//! Images are processed in id order; the per-image work is farmed to the
//! worker pool and reassembled in that same order, so the file is
//! byte-identical at any `--threads`.

use rayon::prelude::*;
use std::collections::BTreeMap;

use mexdet_core::detect::{detect, write_detections_csv, Detection};
use mexdet_core::geometry::BBox;
use mexdet_core::network::load_weights;
use mexdet_core::proposals::load_proposals;

use crate::args::DetectArgs;
use crate::commands::{load_dataset, Ctx};
use crate::config::{base_config, parse_forced_expert, write_manifest, DetectCmdConfig};
use crate::errors::{CliError, CliResult};

pub fn resolve(ctx: &Ctx, args: &DetectArgs) -> CliResult<DetectCmdConfig> {
    let mut cfg: DetectCmdConfig = base_config(ctx.config.as_deref(), "detect")?;
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
    if let Some(v) = args.score_threshold {
        cfg.detect.score_threshold = v;
    }
    if let Some(v) = args.nms_iou {
        cfg.detect.nms_iou = v;
    }
    if let Some(v) = args.max_per_class {
        cfg.detect.max_per_class = v;
    }
    if let Some(s) = &args.forced_expert {
        cfg.detect.forced_expert = parse_forced_expert(s)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(ctx: &Ctx, args: &DetectArgs) -> CliResult<()> {
    let cfg = resolve(ctx, args)?;
    let out = ctx.ensure_out_dir()?;
    let ds = load_dataset(&cfg.dataset)?;

    let net = load_weights(&cfg.weights)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.weights.display())))?;
    let sets = load_proposals(&cfg.proposals, &ds.extents(cfg.split))
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.proposals.display())))?;
    let boxes: BTreeMap<String, Vec<BBox>> = sets
        .into_iter()
        .map(|(id, s)| (id, s.boxes))
        .collect();

    // Same visit order as a sequential pass over the proposal map.
    let per_image: Vec<Vec<Detection>> = boxes
        .par_iter()
        .map(|(id, rois)| {
            let img = ds
                .images
                .get(id)
                .ok_or_else(|| CliError::Data(format!("regions reference unknown image `{id}`")))?;
            Ok(detect(&net, img, rois, &cfg.detect)?)
        })
        .collect::<CliResult<_>>()?;
    let dets: Vec<Detection> = per_image.into_iter().flatten().collect();

    let names = ds.config.class_names();
    let path = out.join("detections.csv");
    write_detections_csv(&path, &dets, &names)?;
    write_manifest(&out, "detect", &cfg)?;

    println!(
        "wrote {} detections over {} images to {}",
        dets.len(),
        boxes.len(),
        path.display()
    );
    Ok(())
}
