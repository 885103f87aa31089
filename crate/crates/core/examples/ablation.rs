//! End-to-end ablation on the synthetic dataset: one expert vs three,
//! sparse proposals vs sparse-plus-dense, plus a per-expert breakdown of
//! the best model. Prints the mAP grid this library's acceptance margins
//! are calibrated against.
//!
//! Usage: `cargo run --release --example ablation [iterations] [seed]`

use std::collections::BTreeMap;
use std::time::Instant;

use mexdet_core::dataset::{synth_dataset, Split, SynthConfig};
use mexdet_core::detect::{detect_all, DetectConfig};
use mexdet_core::eval::{mean_ap, per_expert_eval};
use mexdet_core::exhaustive::{exhaustive_windows, ExhaustiveConfig};
use mexdet_core::geometry::BBox;
use mexdet_core::labeling::build_pool;
use mexdet_core::network::{train, NetConfig, TrainConfig};
use mexdet_core::proposals::{merge_roi_sets, simulate_proposals, windows_as_set, ProposalSet};
use mexdet_core::router::RoutingPolicy;
use mexdet_core::util::derive_seed;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iterations: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0);

    let t0 = Instant::now();
    let ds = synth_dataset(&SynthConfig {
        seed,
        ..Default::default()
    })
    .unwrap();
    println!(
        "dataset: {} train / {} test images ({:?})",
        ds.train_ids.len(),
        ds.test_ids.len(),
        t0.elapsed()
    );

    // Sparse stand-in proposals for both splits, dense windows for train.
    let sparse_for = |ids: &[String]| -> BTreeMap<String, ProposalSet> {
        ids.iter()
            .map(|id| {
                let ann = ds.annotation(id).unwrap();
                let gts: Vec<BBox> = ann.objects.iter().map(|o| o.bbox).collect();
                let set = simulate_proposals(
                    id,
                    f64::from(ann.width),
                    f64::from(ann.height),
                    &gts,
                    0.3,
                    20,
                    derive_seed(seed, "proposals"),
                )
                .unwrap();
                (id.clone(), set)
            })
            .collect()
    };
    let sparse_train = sparse_for(&ds.train_ids);
    let sparse_test = sparse_for(&ds.test_ids);

    let dense: BTreeMap<String, Vec<BBox>> = ds
        .train_ids
        .iter()
        .map(|id| {
            let ann = ds.annotation(id).unwrap();
            let w = exhaustive_windows(
                f64::from(ann.width),
                f64::from(ann.height),
                &ExhaustiveConfig::default(),
            )
            .unwrap();
            (id.clone(), w)
        })
        .collect();
    println!(
        "proposals: sparse ~{} per image, dense ~{} per image ({:?})",
        sparse_train.values().map(|s| s.boxes.len()).sum::<usize>() / ds.train_ids.len(),
        dense.values().map(Vec::len).sum::<usize>() / ds.train_ids.len(),
        t0.elapsed()
    );

    let combined: BTreeMap<String, Vec<BBox>> = ds
        .train_ids
        .iter()
        .map(|id| {
            let s = &sparse_train[id];
            let d = windows_as_set(id, s.width, s.height, &dense[id]);
            (id.clone(), merge_roi_sets(s, &d).unwrap().boxes)
        })
        .collect();
    let sparse_only: BTreeMap<String, Vec<BBox>> = sparse_train
        .iter()
        .map(|(id, s)| (id.clone(), s.boxes.clone()))
        .collect();
    let test_boxes: BTreeMap<String, Vec<BBox>> = sparse_test
        .iter()
        .map(|(id, s)| (id.clone(), s.boxes.clone()))
        .collect();

    let anns = ds.split_annotations(Split::Train);
    let test_anns: Vec<_> = ds
        .split_annotations(Split::Test)
        .into_iter()
        .cloned()
        .collect();

    let mut grid = BTreeMap::new();
    for (routing, tag_r) in [
        (RoutingPolicy::SingleExpert, "1x"),
        (RoutingPolicy::ByShape, "3x"),
    ] {
        for (rois, tag_p) in [(&sparse_only, "sparse"), (&combined, "combined")] {
            let t = Instant::now();
            let pool = build_pool(&anns, rois);
            let net_cfg = NetConfig {
                routing,
                ..Default::default()
            };
            let train_cfg = TrainConfig {
                iterations,
                seed,
                ..Default::default()
            };
            let (net, log) = train(&ds.images, &pool, &net_cfg, &train_cfg).unwrap();
            let dets = detect_all(&net, &ds.images, &test_boxes, &DetectConfig::default()).unwrap();
            let report = mean_ap(&dets, &test_anns, 3, 0.5);
            println!(
                "{tag_r}/{tag_p}: mAP@0.5 {:?} per-class {:?} (loss {:.3} -> {:.3}, {:?})",
                report.map,
                report.per_class,
                log.first().map(|r| r.loss.total).unwrap_or(0.0),
                log.last().map(|r| r.loss.total).unwrap_or(0.0),
                t.elapsed()
            );
            grid.insert((tag_r, tag_p), (net, report.map.unwrap_or(0.0)));
        }
    }

    let (best_net, _) = &grid[&("3x", "combined")];
    let runs = per_expert_eval(
        best_net,
        &ds.images,
        &test_boxes,
        &test_anns,
        &DetectConfig::default(),
        0.5,
    )
    .unwrap();
    for run in &runs {
        println!(
            "forced {:?}: per-class {:?} map {:?}",
            run.forced, run.per_class, run.map
        );
    }
    println!("total {:?}", t0.elapsed());
}
