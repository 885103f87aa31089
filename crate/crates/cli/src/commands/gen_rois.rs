//! `mexdet gen-rois`: candidate regions for one split, written as a JSON
//! array with one record per image (`proposals.json`).
//!
//! All three modes emit the same file format, so downstream commands load
//! any of them with one reader. Per-image generation is independent and
//! seeded per image id, so the worker pool cannot change the output.

use rayon::prelude::*;
use std::collections::BTreeMap;

use mexdet_core::dataset::Dataset;
use mexdet_core::exhaustive::exhaustive_windows;
use mexdet_core::geometry::BBox;
use mexdet_core::proposals::{
    merge_roi_sets, save_proposals, simulate_proposals, windows_as_set, ProposalSet,
};

use crate::args::GenRoisArgs;
use crate::commands::{load_dataset, Ctx};
use crate::config::{base_config, write_manifest, GenMode, GenRoisConfig};
use crate::errors::{CliError, CliResult};

pub fn resolve(ctx: &Ctx, args: &GenRoisArgs) -> CliResult<GenRoisConfig> {
    let mut cfg: GenRoisConfig = base_config(ctx.config.as_deref(), "gen-rois")?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    if let Some(p) = &args.dataset {
        cfg.dataset = p.clone();
    }
    if let Some(s) = &args.split {
        cfg.split = crate::config::parse_split(s)?;
    }
    if let Some(m) = &args.mode {
        cfg.mode = GenMode::parse(m)?;
    }
    if let Some(j) = args.jitter {
        cfg.jitter = j;
    }
    if let Some(n) = args.random_count {
        cfg.random_count = n;
    }
    if args.allow_dense_test {
        cfg.allow_dense_test = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn one_image(ds: &Dataset, cfg: &GenRoisConfig, id: &str) -> CliResult<ProposalSet> {
    let ann = ds
        .annotation(id)
        .ok_or_else(|| CliError::Internal(format!("split lists unknown image `{id}`")))?;
    let (w, h) = (f64::from(ann.width), f64::from(ann.height));

    let sparse = || -> CliResult<ProposalSet> {
        let gts: Vec<BBox> = ann.objects.iter().map(|o| o.bbox).collect();
        Ok(simulate_proposals(
            id,
            w,
            h,
            &gts,
            cfg.jitter,
            cfg.random_count,
            cfg.seed,
        )?)
    };
    let dense = || -> CliResult<ProposalSet> {
        let windows = exhaustive_windows(w, h, &cfg.exhaustive)?;
        Ok(windows_as_set(id, w, h, &windows))
    };

    Ok(match cfg.mode {
        GenMode::Simulate => sparse()?,
        GenMode::Exhaustive => dense()?,
        GenMode::Merge => merge_roi_sets(&sparse()?, &dense()?)?,
    })
}

pub fn run(ctx: &Ctx, args: &GenRoisArgs) -> CliResult<()> {
    let cfg = resolve(ctx, args)?;
    let out = ctx.ensure_out_dir()?;
    let ds = load_dataset(&cfg.dataset)?;

    let ids = ds.split_ids(cfg.split);
    let sets: BTreeMap<String, ProposalSet> = ids
        .par_iter()
        .map(|id| one_image(&ds, &cfg, id).map(|set| (id.clone(), set)))
        .collect::<CliResult<_>>()?;

    let path = out.join("proposals.json");
    save_proposals(&path, &sets)?;
    write_manifest(&out, "gen-rois", &cfg)?;

    let total: usize = sets.values().map(|s| s.boxes.len()).sum();
    println!(
        "wrote {} regions over {} {} images to {}",
        total,
        sets.len(),
        cfg.split.as_str(),
        path.display()
    );
    Ok(())
}
