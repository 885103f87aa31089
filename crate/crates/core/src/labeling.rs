//! RoI labeling against ground truth and per-expert training batch assembly.
//!
//! Labels follow the usual region-classification thresholds: an RoI is a
//! positive for the ground-truth box it overlaps most if that IoU is at
//! least 0.5, a background sample if its best IoU falls in [0.1, 0.5), and
//! excluded from training entirely below 0.1.
//!
//! Each training iteration draws one batch per expert. A batch holds 128
//! RoIs taken 64 each from 2 distinct images, targeting 16 positives and 48
//! negatives per image (a fixed 1:3 ratio at full supply). Shortfalls fill
//! deterministically: missing positives become extra negatives from the same
//! image; missing negatives are drawn with replacement, falling back to the
//! partner image's negatives, and only when no negative exists anywhere in
//! the pair are positives repeated.

use std::collections::BTreeMap;

use rand::Rng;

use crate::geometry::{aspect_log_ratio, encode_regression, BBox, RegressionTarget};
use crate::router::{train_categories, ExpertId, ExpertSet, RoutingPolicy};
use crate::{Error, Result};

pub const BATCH_SIZE: usize = 128;
pub const IMAGES_PER_BATCH: usize = 2;
pub const ROIS_PER_IMAGE: usize = BATCH_SIZE / IMAGES_PER_BATCH;
pub const POSITIVES_PER_IMAGE: usize = 16;

pub const POSITIVE_IOU: f64 = 0.5;
pub const NEGATIVE_IOU_LO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum RoiLabel {
    /// Positive sample: matched class (1-based) and its regression target.
    Object { class: usize, target: RegressionTarget },
    Background,
    /// Best IoU below 0.1; never sampled into a batch.
    Excluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRoi {
    pub image_id: String,
    pub bbox: BBox,
    pub max_iou: f64,
    pub label: RoiLabel,
    /// Experts this RoI may train (overlapping assignment).
    pub train_experts: ExpertSet,
}

impl LabeledRoi {
    pub fn is_positive(&self) -> bool {
        matches!(self.label, RoiLabel::Object { .. })
    }

    pub fn is_background(&self) -> bool {
        matches!(self.label, RoiLabel::Background)
    }

    pub fn is_excluded(&self) -> bool {
        matches!(self.label, RoiLabel::Excluded)
    }
}

/// Label every RoI of one image against that image's ground truth.
///
/// Ties on best IoU go to the lowest ground-truth index. With no ground
/// truth at all every RoI is excluded.
pub fn label_rois(image_id: &str, rois: &[BBox], gts: &[(usize, BBox)]) -> Vec<LabeledRoi> {
    rois.iter()
        .map(|roi| {
            let mut best_iou = 0.0f64;
            let mut best: Option<&(usize, BBox)> = None;
            for gt in gts {
                let overlap = crate::geometry::iou(roi, &gt.1);
                if overlap > best_iou {
                    best_iou = overlap;
                    best = Some(gt);
                }
            }
            let label = if best_iou >= POSITIVE_IOU {
                let (class, gt_box) = best.expect("positive requires a match");
                RoiLabel::Object {
                    class: *class,
                    target: encode_regression(roi, gt_box),
                }
            } else if best_iou >= NEGATIVE_IOU_LO {
                RoiLabel::Background
            } else {
                RoiLabel::Excluded
            };
            LabeledRoi {
                image_id: image_id.to_string(),
                bbox: *roi,
                max_iou: best_iou,
                label,
                train_experts: train_categories(aspect_log_ratio(roi)),
            }
        })
        .collect()
}

/// Labeled RoIs for many images, keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct LabeledPool {
    pub images: BTreeMap<String, Vec<LabeledRoi>>,
}

impl LabeledPool {
    pub fn insert(&mut self, image_id: &str, rois: Vec<LabeledRoi>) {
        self.images.insert(image_id.to_string(), rois);
    }

    fn eligible(&self, image_id: &str, expert: ExpertId, policy: RoutingPolicy) -> Vec<&LabeledRoi> {
        self.images[image_id]
            .iter()
            .filter(|r| roi_eligible(r, expert, policy))
            .collect()
    }

    fn eligible_image_ids(&self, expert: ExpertId, policy: RoutingPolicy) -> Vec<&String> {
        self.images
            .iter()
            .filter(|(_, rois)| rois.iter().any(|r| roi_eligible(r, expert, policy)))
            .map(|(id, _)| id)
            .collect()
    }
}

fn roi_eligible(roi: &LabeledRoi, expert: ExpertId, policy: RoutingPolicy) -> bool {
    if roi.is_excluded() {
        return false;
    }
    match policy {
        RoutingPolicy::ByShape => roi.train_experts.contains(expert),
        // The single-expert baseline funnels every RoI to S.
        RoutingPolicy::SingleExpert => expert == ExpertId::S,
    }
}

#[derive(Debug, Clone)]
pub struct ExpertBatch {
    pub expert: ExpertId,
    pub image_ids: [String; 2],
    pub rois: Vec<LabeledRoi>,
}

impl ExpertBatch {
    pub fn positives(&self) -> usize {
        self.rois.iter().filter(|r| r.is_positive()).count()
    }
}

/// Draw one 128-RoI batch for `expert` from two distinct images.
pub fn sample_expert_batch<R: Rng>(
    pool: &LabeledPool,
    expert: ExpertId,
    policy: RoutingPolicy,
    rng: &mut R,
) -> Result<ExpertBatch> {
    let candidates = pool.eligible_image_ids(expert, policy);
    if candidates.len() < IMAGES_PER_BATCH {
        return Err(Error::Data(format!(
            "expert {expert} has only {} image(s) with eligible RoIs; need {}",
            candidates.len(),
            IMAGES_PER_BATCH
        )));
    }
    let first = rng.gen_range(0..candidates.len());
    let mut second = rng.gen_range(0..candidates.len() - 1);
    if second >= first {
        second += 1;
    }
    let chosen = [candidates[first].clone(), candidates[second].clone()];

    // Per-image draw, recording any negative shortfall to settle afterwards.
    let mut rois: Vec<LabeledRoi> = Vec::with_capacity(BATCH_SIZE);
    let mut deficits: Vec<usize> = Vec::new();
    let mut negatives_by_image: Vec<Vec<&LabeledRoi>> = Vec::new();
    for image_id in &chosen {
        let eligible = pool.eligible(image_id, expert, policy);
        let mut positives: Vec<&LabeledRoi> = Vec::new();
        let mut negatives: Vec<&LabeledRoi> = Vec::new();
        for r in eligible {
            if r.is_positive() {
                positives.push(r);
            } else {
                negatives.push(r);
            }
        }
        let n_pos = positives.len().min(POSITIVES_PER_IMAGE);
        let picked_pos = sample_without_replacement(&positives, n_pos, rng);
        let want_neg = ROIS_PER_IMAGE - n_pos;
        let n_neg = negatives.len().min(want_neg);
        let picked_neg = sample_without_replacement(&negatives, n_neg, rng);
        let mut deficit = want_neg - n_neg;
        rois.extend(picked_pos.into_iter().cloned());
        rois.extend(picked_neg.into_iter().cloned());
        // Refill from this image's own negatives with replacement first.
        while deficit > 0 && !negatives.is_empty() {
            rois.push(negatives[rng.gen_range(0..negatives.len())].clone());
            deficit -= 1;
        }
        deficits.push(deficit);
        negatives_by_image.push(negatives);
    }

    // Cross-image fallback for images with no negatives at all.
    let all_negatives: Vec<&LabeledRoi> = negatives_by_image.into_iter().flatten().collect();
    for deficit in deficits {
        for _ in 0..deficit {
            if !all_negatives.is_empty() {
                rois.push(all_negatives[rng.gen_range(0..all_negatives.len())].clone());
            } else {
                // Last resort: repeat an already drawn (positive) RoI.
                let i = rng.gen_range(0..rois.len());
                let dup = rois[i].clone();
                rois.push(dup);
            }
        }
    }

    debug_assert_eq!(rois.len(), BATCH_SIZE);
    Ok(ExpertBatch {
        expert,
        image_ids: chosen,
        rois,
    })
}

fn sample_without_replacement<'a, R: Rng>(
    items: &[&'a LabeledRoi],
    n: usize,
    rng: &mut R,
) -> Vec<&'a LabeledRoi> {
    // Partial Fisher-Yates over an index vector.
    let mut idx: Vec<usize> = (0..items.len()).collect();
    for i in 0..n {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| items[i]).collect()
}

/// One training iteration's batches: `[H, S, V]` under shape routing, a
/// single S batch for the one-expert baseline.
pub fn make_training_iteration<R: Rng>(
    pool: &LabeledPool,
    policy: RoutingPolicy,
    rng: &mut R,
) -> Result<Vec<ExpertBatch>> {
    let experts: &[ExpertId] = match policy {
        RoutingPolicy::ByShape => &ExpertId::ALL,
        RoutingPolicy::SingleExpert => &[ExpertId::S],
    };
    experts
        .iter()
        .map(|e| sample_expert_batch(pool, *e, policy, rng))
        .collect()
}

/// Label a whole split's RoIs in one go.
pub fn build_pool(
    annotations: &[&crate::dataset::Annotation],
    rois_by_image: &BTreeMap<String, Vec<BBox>>,
) -> LabeledPool {
    let mut pool = LabeledPool::default();
    for ann in annotations {
        let Some(rois) = rois_by_image.get(&ann.image_id) else {
            continue;
        };
        let gts: Vec<(usize, BBox)> = ann.objects.iter().map(|o| (o.class, o.bbox)).collect();
        pool.insert(&ann.image_id, label_rois(&ann.image_id, rois, &gts));
    }
    pool
}
