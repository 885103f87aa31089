//! Detection quality metrics: per-class average precision with all-points
//! interpolation, mAP over one or many IoU thresholds, proposal recall
//! curves, IoU coverage histograms, and per-expert comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, Image};
use crate::detect::{detect_all, DetectConfig, Detection};
use crate::geometry::{iou, BBox};
use crate::network::Network;
use crate::router::ExpertId;
use crate::Result;

/// Greedy matching for one class: detections in descending score order
/// (stable for equal scores) claim the unclaimed ground-truth box of their
/// image with the highest IoU at or above the threshold; equal IoUs go to
/// the lowest ground-truth index. Returns the true-positive flag per
/// detection in visit order plus the class's ground-truth count.
fn match_detections(
    dets: &[Detection],
    anns: &[Annotation],
    class: usize,
    iou_thresh: f64,
) -> (Vec<bool>, usize) {
    let mut gts: BTreeMap<&str, Vec<&BBox>> = BTreeMap::new();
    let mut n_gt = 0;
    for ann in anns {
        let boxes: Vec<&BBox> = ann
            .objects
            .iter()
            .filter(|o| o.class == class)
            .map(|o| &o.bbox)
            .collect();
        n_gt += boxes.len();
        gts.insert(&ann.image_id, boxes);
    }
    let mut claimed: BTreeMap<&str, Vec<bool>> = gts
        .iter()
        .map(|(id, v)| (*id, vec![false; v.len()]))
        .collect();
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class == class).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut tps = Vec::with_capacity(order.len());
    for &i in &order {
        let det = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(boxes) = gts.get(det.image_id.as_str()) {
            let taken = &claimed[det.image_id.as_str()];
            for (gi, gt) in boxes.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let v = iou(&det.bbox, gt);
                if v >= iou_thresh && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                claimed.get_mut(det.image_id.as_str()).unwrap()[gi] = true;
                tps.push(true);
            }
            None => tps.push(false),
        }
    }
    (tps, n_gt)
}

/// All-points interpolated average precision for one class, or `None` when
/// the class has no ground truth to measure against.
pub fn average_precision(
    dets: &[Detection],
    anns: &[Annotation],
    class: usize,
    iou_thresh: f64,
) -> Option<f64> {
    let (tps, n_gt) = match_detections(dets, anns, class, iou_thresh);
    if n_gt == 0 {
        return None;
    }
    if tps.is_empty() {
        return Some(0.0);
    }
    let mut precisions = Vec::with_capacity(tps.len());
    let mut recalls = Vec::with_capacity(tps.len());
    let mut tp = 0usize;
    for (i, &is_tp) in tps.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // Precision envelope: best precision achievable at this recall or more.
    for i in (0..precisions.len() - 1).rev() {
        if precisions[i + 1] > precisions[i] {
            precisions[i] = precisions[i + 1];
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precisions.iter().zip(&recalls) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// Indexed by class minus one; `None` where the class has no ground
    /// truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over measured classes; `None` when nothing was measurable.
    pub map: Option<f64>,
}

pub fn mean_ap(
    dets: &[Detection],
    anns: &[Annotation],
    num_classes: usize,
    iou_thresh: f64,
) -> ApReport {
    let per_class: Vec<Option<f64>> = (1..=num_classes)
        .map(|c| average_precision(dets, anns, c, iou_thresh))
        .collect();
    let measured: Vec<f64> = per_class.iter().filter_map(|a| *a).collect();
    let map = (!measured.is_empty()).then(|| measured.iter().sum::<f64>() / measured.len() as f64);
    ApReport { per_class, map }
}

/// IoU thresholds 0.50, 0.55, .. 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Mean of mAP over the threshold grid; `None` when no class is measurable.
pub fn mean_ap_coco(dets: &[Detection], anns: &[Annotation], num_classes: usize) -> Option<f64> {
    let maps: Vec<f64> = coco_thresholds()
        .into_iter()
        .map(|t| mean_ap(dets, anns, num_classes, t).map)
        .collect::<Option<Vec<f64>>>()?;
    Some(maps.iter().sum::<f64>() / maps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub iou: f64,
    /// Ground-truth boxes whose best proposal reaches the IoU, over all
    /// ground-truth boxes.
    pub recall: f64,
    pub matched: usize,
    pub total: usize,
}

pub fn default_recall_thresholds() -> Vec<f64> {
    coco_thresholds()
}

/// Best-proposal recall at each threshold, classes pooled. Ground truth in
/// images without proposals counts as unmatched.
pub fn recall_curve(
    proposals: &BTreeMap<String, Vec<BBox>>,
    anns: &[Annotation],
    thresholds: &[f64],
) -> Vec<RecallPoint> {
    let mut best = Vec::new();
    for ann in anns {
        let props = proposals.get(&ann.image_id).map(Vec::as_slice).unwrap_or(&[]);
        for obj in &ann.objects {
            let b = props
                .iter()
                .map(|p| iou(p, &obj.bbox))
                .fold(0.0, f64::max);
            best.push(b);
        }
    }
    thresholds
        .iter()
        .map(|&t| {
            let matched = best.iter().filter(|&&b| b >= t).count();
            RecallPoint {
                iou: t,
                recall: if best.is_empty() {
                    0.0
                } else {
                    matched as f64 / best.len() as f64
                },
                matched,
                total: best.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Histogram over each proposal's best IoU with its image's ground truth.
/// Bins split [0, 1] evenly; the last bin includes 1.0 itself. Proposals in
/// images without ground truth land in the first bin.
pub fn iou_histogram(
    proposals: &BTreeMap<String, Vec<BBox>>,
    anns: &[Annotation],
    num_bins: usize,
) -> Vec<HistBin> {
    assert!(num_bins > 0, "need at least one bin");
    let gts: BTreeMap<&str, Vec<&BBox>> = anns
        .iter()
        .map(|a| (a.image_id.as_str(), a.objects.iter().map(|o| &o.bbox).collect()))
        .collect();
    let mut counts = vec![0usize; num_bins];
    for (id, props) in proposals {
        let empty = Vec::new();
        let boxes = gts.get(id.as_str()).unwrap_or(&empty);
        for p in props {
            let best = boxes.iter().map(|g| iou(p, g)).fold(0.0, f64::max);
            let bin = ((best * num_bins as f64).floor() as usize).min(num_bins - 1);
            counts[bin] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistBin {
            lo: i as f64 / num_bins as f64,
            hi: (i + 1) as f64 / num_bins as f64,
            count,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertEval {
    /// `None` is the shape-routed run; `Some(e)` forces every proposal
    /// through one expert.
    pub forced: Option<ExpertId>,
    pub per_class: Vec<Option<f64>>,
    pub map: Option<f64>,
}

/// Compare shape routing against each expert running alone. The routed run
/// comes first, then H, S, V.
pub fn per_expert_eval(
    net: &Network,
    images: &BTreeMap<String, Image>,
    proposals: &BTreeMap<String, Vec<BBox>>,
    anns: &[Annotation],
    cfg: &DetectConfig,
    iou_thresh: f64,
) -> Result<Vec<ExpertEval>> {
    let mut out = Vec::with_capacity(4);
    for forced in [None, Some(ExpertId::H), Some(ExpertId::S), Some(ExpertId::V)] {
        let run_cfg = DetectConfig {
            forced_expert: forced,
            ..cfg.clone()
        };
        let dets = detect_all(net, images, proposals, &run_cfg)?;
        let report = mean_ap(&dets, anns, net.config.num_classes, iou_thresh);
        out.push(ExpertEval {
            forced,
            per_class: report.per_class,
            map: report.map,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GtObject;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(image: &str, class: usize, score: f64, bbox: BBox) -> Detection {
        Detection {
            image_id: image.into(),
            class,
            score,
            bbox,
            expert: ExpertId::S,
        }
    }

    fn ann(image: &str, objects: Vec<(usize, BBox)>) -> Annotation {
        Annotation {
            image_id: image.into(),
            width: 100,
            height: 100,
            objects: objects
                .into_iter()
                .map(|(class, bbox)| GtObject { class, bbox })
                .collect(),
        }
    }

    #[test]
    fn ap_hand_example() {
        let anns = vec![ann(
            "i",
            vec![(1, bx(0.0, 0.0, 10.0, 10.0)), (1, bx(20.0, 20.0, 30.0, 30.0))],
        )];
        let dets = vec![
            det("i", 1, 0.9, bx(0.0, 0.0, 10.0, 10.0)),
            det("i", 1, 0.8, bx(50.0, 50.0, 60.0, 60.0)),
            det("i", 1, 0.7, bx(20.0, 20.0, 30.0, 30.0)),
        ];
        // Precisions 1, 1/2, 2/3 at recalls 1/2, 1/2, 1; all-points area
        // is 0.5 * 1 + 0.5 * 2/3.
        let ap = average_precision(&dets, &anns, 1, 0.5).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12, "{ap}");
    }

    #[test]
    fn ap_without_ground_truth_is_none() {
        let anns = vec![ann("i", vec![(2, bx(0.0, 0.0, 10.0, 10.0))])];
        assert_eq!(average_precision(&[], &anns, 1, 0.5), None);
        // Detections of an unmeasured class do not invent one.
        let dets = vec![det("i", 1, 0.9, bx(0.0, 0.0, 10.0, 10.0))];
        assert_eq!(average_precision(&dets, &anns, 1, 0.5), None);
    }

    #[test]
    fn ap_with_ground_truth_but_no_detections_is_zero() {
        let anns = vec![ann("i", vec![(1, bx(0.0, 0.0, 10.0, 10.0))])];
        assert_eq!(average_precision(&[], &anns, 1, 0.5), Some(0.0));
    }

    #[test]
    fn each_ground_truth_matches_at_most_once() {
        let anns = vec![ann("i", vec![(1, bx(0.0, 0.0, 10.0, 10.0))])];
        let dets = vec![
            det("i", 1, 0.9, bx(0.0, 0.0, 10.0, 10.0)),
            det("i", 1, 0.8, bx(0.0, 0.0, 10.0, 9.0)),
        ];
        let (tps, n_gt) = match_detections(&dets, &anns, 1, 0.5);
        assert_eq!(tps, vec![true, false]);
        assert_eq!(n_gt, 1);
    }

    #[test]
    fn equal_iou_ties_claim_the_lowest_index() {
        // The first detection overlaps both halves equally; claiming the
        // lower-indexed half leaves the second detection unmatched.
        let anns = vec![ann(
            "i",
            vec![(1, bx(0.0, 0.0, 10.0, 5.0)), (1, bx(0.0, 5.0, 10.0, 10.0))],
        )];
        let dets = vec![
            det("i", 1, 0.9, bx(0.0, 0.0, 10.0, 10.0)),
            det("i", 1, 0.8, bx(0.0, 0.0, 10.0, 5.0)),
        ];
        let (tps, _) = match_detections(&dets, &anns, 1, 0.5);
        assert_eq!(tps, vec![true, false]);
    }

    #[test]
    fn matching_is_confined_to_the_detection_image() {
        let anns = vec![
            ann("a", vec![(1, bx(0.0, 0.0, 10.0, 10.0))]),
            ann("b", vec![]),
        ];
        let dets = vec![det("b", 1, 0.9, bx(0.0, 0.0, 10.0, 10.0))];
        let (tps, n_gt) = match_detections(&dets, &anns, 1, 0.5);
        assert_eq!(tps, vec![false]);
        assert_eq!(n_gt, 1);
    }

    #[test]
    fn map_averages_measured_classes_only() {
        let anns = vec![ann("i", vec![(1, bx(0.0, 0.0, 10.0, 10.0))])];
        let dets = vec![det("i", 1, 0.9, bx(0.0, 0.0, 10.0, 10.0))];
        let report = mean_ap(&dets, &anns, 3, 0.5);
        assert_eq!(report.per_class[0], Some(1.0));
        assert_eq!(report.per_class[1], None);
        assert_eq!(report.per_class[2], None);
        assert_eq!(report.map, Some(1.0));

        let empty = mean_ap(&[], &[], 3, 0.5);
        assert_eq!(empty.map, None);
    }

    #[test]
    fn coco_grid_is_ten_thresholds_and_rewards_exact_boxes() {
        let t = coco_thresholds();
        assert_eq!(t.len(), 10);
        assert!((t[0] - 0.5).abs() < 1e-12 && (t[9] - 0.95).abs() < 1e-12);
        let anns = vec![ann("i", vec![(1, bx(3.0, 4.0, 30.0, 20.0))])];
        let dets = vec![det("i", 1, 0.9, bx(3.0, 4.0, 30.0, 20.0))];
        assert_eq!(mean_ap_coco(&dets, &anns, 1), Some(1.0));
        // A loose box (IoU ~0.64) passes the low thresholds only.
        let loose = vec![det("i", 1, 0.9, bx(3.0, 4.0, 30.0, 28.0))];
        let coco = mean_ap_coco(&loose, &anns, 1).unwrap();
        assert!(coco > 0.0 && coco < 1.0, "{coco}");
    }

    #[test]
    fn recall_curve_counts_best_matches() {
        let mut proposals = BTreeMap::new();
        proposals.insert("a".to_string(), vec![bx(0.0, 0.0, 10.0, 10.0)]);
        proposals.insert("b".to_string(), vec![bx(0.0, 0.0, 10.0, 18.0)]);
        let anns = vec![
            ann("a", vec![(1, bx(0.0, 0.0, 10.0, 10.0))]),
            ann("b", vec![(2, bx(0.0, 0.0, 10.0, 10.0))]),
        ];
        let curve = recall_curve(&proposals, &anns, &[0.5, 0.6]);
        assert_eq!(curve[0].matched, 2);
        assert_eq!(curve[0].total, 2);
        assert!((curve[0].recall - 1.0).abs() < 1e-12);
        // Image b's best IoU is 10/18.
        assert_eq!(curve[1].matched, 1);
        assert!((curve[1].recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recall_is_monotone_in_threshold() {
        let mut proposals = BTreeMap::new();
        proposals.insert(
            "a".to_string(),
            vec![bx(0.0, 0.0, 8.0, 10.0), bx(2.0, 0.0, 10.0, 10.0)],
        );
        let anns = vec![ann(
            "a",
            vec![(1, bx(0.0, 0.0, 10.0, 10.0)), (1, bx(1.0, 1.0, 9.0, 9.0))],
        )];
        let curve = recall_curve(&proposals, &anns, &default_recall_thresholds());
        assert!(curve.windows(2).all(|w| w[0].recall >= w[1].recall));
    }

    #[test]
    fn histogram_covers_unit_interval_inclusively() {
        let mut proposals = BTreeMap::new();
        proposals.insert(
            "a".to_string(),
            vec![
                bx(0.0, 0.0, 10.0, 10.0),  // IoU 1.0
                bx(50.0, 50.0, 60.0, 60.0), // IoU 0.0
                bx(0.0, 0.0, 10.0, 5.0),   // IoU 0.5
            ],
        );
        let anns = vec![ann("a", vec![(1, bx(0.0, 0.0, 10.0, 10.0))])];
        let hist = iou_histogram(&proposals, &anns, 10);
        assert_eq!(hist.len(), 10);
        assert_eq!(hist.iter().map(|b| b.count).sum::<usize>(), 3);
        assert_eq!(hist[9].count, 1, "exact 1.0 lands in the last bin");
        assert_eq!(hist[0].count, 1);
        assert_eq!(hist[5].count, 1, "0.5 belongs to [0.5, 0.6)");
        assert!((hist[9].hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_without_ground_truth_fills_the_first_bin() {
        let mut proposals = BTreeMap::new();
        proposals.insert("a".to_string(), vec![bx(0.0, 0.0, 5.0, 5.0); 4]);
        let hist = iou_histogram(&proposals, &[], 5);
        assert_eq!(hist[0].count, 4);
    }

    #[test]
    fn per_expert_eval_orders_runs_routed_first() {
        use crate::network::{NetConfig, Network};
        let cfg = NetConfig {
            input_w: 16,
            input_h: 16,
            conv1_channels: 2,
            conv2_channels: 2,
            pool_size: 2,
            fc_width: 4,
            num_classes: 3,
            ..Default::default()
        };
        let net = Network::build(&cfg).unwrap();
        let mut images = BTreeMap::new();
        images.insert(
            "a".to_string(),
            Image {
                id: "a".into(),
                w: 16,
                h: 16,
                pixels: vec![128; 256],
            },
        );
        let mut proposals = BTreeMap::new();
        proposals.insert("a".to_string(), vec![bx(2.0, 2.0, 12.0, 12.0)]);
        let anns = vec![ann("a", vec![(1, bx(2.0, 2.0, 12.0, 12.0))])];
        let evals = per_expert_eval(
            &net,
            &images,
            &proposals,
            &anns,
            &DetectConfig::default(),
            0.5,
        )
        .unwrap();
        assert_eq!(evals.len(), 4);
        assert_eq!(evals[0].forced, None);
        assert_eq!(evals[1].forced, Some(ExpertId::H));
        assert_eq!(evals[3].forced, Some(ExpertId::V));
        for e in &evals {
            assert_eq!(e.per_class.len(), 3);
        }
    }
}
