//! `mexdet train`: fit the detector on the train split.
//!
//! `--rois` picks the candidate-region diet: the sparse stand-in file, the
//! dense exhaustive file, or their per-image union. `--experts 1` collapses
//! routing to the single-head baseline. Training itself is sequential;
//! identical inputs give identical weights regardless of `--threads`.

use std::collections::BTreeMap;
use std::path::Path;

use mexdet_core::dataset::{Dataset, Split};
use mexdet_core::geometry::BBox;
use mexdet_core::labeling::build_pool;
use mexdet_core::network::{save_weights, train, write_train_log};
use mexdet_core::proposals::{load_proposals, merge_roi_sets, ProposalSet};

use crate::args::TrainArgs;
use crate::commands::{load_dataset, Ctx};
use crate::config::{base_config, write_manifest, RoisChoice, TrainCmdConfig};
use crate::errors::{CliError, CliResult};

pub fn resolve(ctx: &Ctx, args: &TrainArgs) -> CliResult<TrainCmdConfig> {
    let mut cfg: TrainCmdConfig = base_config(ctx.config.as_deref(), "train")?;
    if let Some(s) = ctx.seed {
        cfg.train.seed = s;
    }
    if let Some(p) = &args.dataset {
        cfg.dataset = p.clone();
    }
    if let Some(r) = &args.rois {
        cfg.rois = RoisChoice::parse(r)?;
    }
    if let Some(p) = &args.sparse_rois {
        cfg.sparse_rois = Some(p.clone());
    }
    if let Some(p) = &args.dense_rois {
        cfg.dense_rois = Some(p.clone());
    }
    if let Some(n) = args.experts {
        cfg.set_experts(n)?;
    }
    if let Some(n) = args.iterations {
        cfg.train.iterations = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_sets(ds: &Dataset, path: &Path) -> CliResult<BTreeMap<String, ProposalSet>> {
    load_proposals(path, &ds.extents(Split::Train))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Assemble the per-image training regions the config asks for.
pub fn training_rois(ds: &Dataset, cfg: &TrainCmdConfig) -> CliResult<BTreeMap<String, Vec<BBox>>> {
    let sparse = match &cfg.sparse_rois {
        Some(p) if cfg.rois.needs_sparse() => Some(load_sets(ds, p)?),
        _ => None,
    };
    let dense = match &cfg.dense_rois {
        Some(p) if cfg.rois.needs_dense() => Some(load_sets(ds, p)?),
        _ => None,
    };

    let mut out = BTreeMap::new();
    for id in &ds.train_ids {
        let s = sparse.as_ref().and_then(|m| m.get(id));
        let d = dense.as_ref().and_then(|m| m.get(id));
        let boxes = match cfg.rois {
            RoisChoice::Sparse => s.map(|set| set.boxes.clone()),
            RoisChoice::Dense => d.map(|set| set.boxes.clone()),
            RoisChoice::Combined => match (s, d) {
                (Some(a), Some(b)) => Some(merge_roi_sets(a, b)?.boxes),
                (Some(a), None) => Some(a.boxes.clone()),
                (None, Some(b)) => Some(b.boxes.clone()),
                (None, None) => None,
            },
        };
        if let Some(boxes) = boxes {
            out.insert(id.clone(), boxes);
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(
            "no train-split image has any candidate regions in the given files".into(),
        ));
    }
    Ok(out)
}

pub fn run(ctx: &Ctx, args: &TrainArgs) -> CliResult<()> {
    let cfg = resolve(ctx, args)?;
    let out = ctx.ensure_out_dir()?;
    let ds = load_dataset(&cfg.dataset)?;

    let rois = training_rois(&ds, &cfg)?;
    let anns = ds.split_annotations(Split::Train);
    let pool = build_pool(&anns, &rois);

    let (net, log) = train(&ds.images, &pool, &cfg.net, &cfg.train)?;

    save_weights(&out.join("weights.json"), &net)?;
    write_train_log(&out.join("train_log.csv"), &log)?;
    write_manifest(&out, "train", &cfg)?;

    let first = log.first().map(|r| r.loss.total).unwrap_or(f64::NAN);
    let last = log.last().map(|r| r.loss.total).unwrap_or(f64::NAN);
    println!(
        "trained {} iterations (loss {first:.4} -> {last:.4}); weights in {}",
        log.len(),
        out.display()
    );
    Ok(())
}
