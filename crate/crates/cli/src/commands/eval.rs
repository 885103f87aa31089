//! `mexdet eval`: score a detections file against one split's ground
//! truth and write `map_report.csv`.

use mexdet_core::detect::read_detections_csv;
use mexdet_core::eval::{mean_ap, mean_ap_coco};

use crate::args::EvalArgs;
use crate::commands::{load_dataset, Ctx};
use crate::config::{base_config, write_manifest, EvalCmdConfig};
use crate::errors::{CliError, CliResult};
use crate::report::write_map_report;

pub fn resolve(ctx: &Ctx, args: &EvalArgs) -> CliResult<EvalCmdConfig> {
    let mut cfg: EvalCmdConfig = base_config(ctx.config.as_deref(), "eval")?;
    if let Some(p) = &args.dataset {
        cfg.dataset = p.clone();
    }
    if let Some(s) = &args.split {
        cfg.split = crate::config::parse_split(s)?;
    }
    if let Some(p) = &args.detections {
        cfg.detections = p.clone();
    }
    if let Some(v) = args.iou {
        cfg.iou = v;
    }
    if args.coco {
        cfg.coco = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(ctx: &Ctx, args: &EvalArgs) -> CliResult<()> {
    let cfg = resolve(ctx, args)?;
    let out = ctx.ensure_out_dir()?;
    let ds = load_dataset(&cfg.dataset)?;

    let names = ds.config.class_names();
    let dets = read_detections_csv(&cfg.detections, &names)
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.detections.display())))?;
    let anns: Vec<_> = ds
        .split_annotations(cfg.split)
        .into_iter()
        .cloned()
        .collect();

    let report = mean_ap(&dets, &anns, names.len(), cfg.iou);
    let coco = cfg
        .coco
        .then(|| mean_ap_coco(&dets, &anns, names.len()));

    let path = out.join("map_report.csv");
    write_map_report(&path, &report, &names, coco)?;
    write_manifest(&out, "eval", &cfg)?;

    match report.map {
        Some(m) => println!(
            "mAP@{} = {:.4} over {} detections ({})",
            cfg.iou,
            m,
            dets.len(),
            path.display()
        ),
        None => println!(
            "no class was measurable over {} detections ({})",
            dets.len(),
            path.display()
        ),
    }
    Ok(())
}
