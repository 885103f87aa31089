//! Detection-time pipeline: route proposals to experts, score them, decode
//! box deltas, and fuse everything through per-class non-maximum
//! suppression into one detection list per image.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Image;
use crate::geometry::{clip_to_image, decode_regression, BBox};
use crate::network::{deltas_as_target, Network};
use crate::router::{test_category_for_box_with, ExpertId, RouterBounds};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Per-class score floor; candidates below it are never decoded.
    pub score_threshold: f64,
    /// Suppress a candidate when its IoU with an already kept one strictly
    /// exceeds this.
    pub nms_iou: f64,
    /// Kept detections per class per image, applied after suppression.
    pub max_per_class: usize,
    /// Route every proposal to this expert instead of by shape. Used for
    /// per-expert analysis.
    pub forced_expert: Option<ExpertId>,
    pub bounds: RouterBounds,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            score_threshold: 0.05,
            nms_iou: 0.3,
            max_per_class: 100,
            forced_expert: None,
            bounds: RouterBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    /// 1-based object class.
    pub class: usize,
    pub score: f64,
    pub bbox: BBox,
    pub expert: ExpertId,
}

/// Greedy per-class suppression. Candidates are visited in descending
/// score order (equal scores keep their input order); each kept candidate
/// suppresses others whose IoU with it strictly exceeds `iou_thresh`.
/// Returns kept indices into the input, in pick order.
pub fn nms_indices(boxes: &[BBox], scores: &[f64], iou_thresh: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len());
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut suppressed = vec![false; boxes.len()];
    let mut kept = Vec::new();
    for &i in &order {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        for &j in &order {
            if !suppressed[j] && j != i && crate::geometry::iou(&boxes[i], &boxes[j]) > iou_thresh
            {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Detect objects in one image from a set of proposal boxes.
///
/// Every proposal runs through exactly one expert (by shape, or the forced
/// one). Per class, candidates at or above the score floor are decoded,
/// clipped to the image (decode or clip failures drop the candidate), and
/// suppressed per `nms_iou`; the survivors of all classes are merged and
/// sorted by descending score.
pub fn detect(
    net: &Network,
    img: &Image,
    proposals: &[BBox],
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&cfg.score_threshold) {
        return Err(Error::InvalidConfig(format!(
            "score_threshold {} outside [0, 1]",
            cfg.score_threshold
        )));
    }
    let routed: Vec<(BBox, ExpertId)> = proposals
        .iter()
        .map(|b| {
            let e = cfg
                .forced_expert
                .unwrap_or_else(|| test_category_for_box_with(&cfg.bounds, b));
            (*b, e)
        })
        .collect();
    let outputs = net.forward(img, &routed)?;
    let num_classes = net.config.num_classes;
    let mut detections = Vec::new();
    for class in 1..=num_classes {
        let mut cand_boxes = Vec::new();
        let mut cand_scores = Vec::new();
        let mut cand_experts = Vec::new();
        for ((bbox, expert), out) in routed.iter().zip(&outputs) {
            let score = out.probs[class];
            if score < cfg.score_threshold {
                continue;
            }
            let group = (class - 1) * 4;
            let target = deltas_as_target(&net.config, &out.deltas[group..group + 4]);
            let Ok(decoded) = decode_regression(bbox, &target) else {
                continue;
            };
            let Ok(clipped) =
                clip_to_image(&decoded, f64::from(img.w), f64::from(img.h))
            else {
                continue;
            };
            cand_boxes.push(clipped);
            cand_scores.push(score);
            cand_experts.push(*expert);
        }
        let kept = nms_indices(&cand_boxes, &cand_scores, cfg.nms_iou);
        for &i in kept.iter().take(cfg.max_per_class) {
            detections.push(Detection {
                image_id: img.id.clone(),
                class,
                score: cand_scores[i],
                bbox: cand_boxes[i],
                expert: cand_experts[i],
            });
        }
    }
    detections.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
    });
    Ok(detections)
}

/// Detect across a set of images, in proposal-map key order.
pub fn detect_all(
    net: &Network,
    images: &BTreeMap<String, Image>,
    proposals: &BTreeMap<String, Vec<BBox>>,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (id, boxes) in proposals {
        let img = images
            .get(id)
            .ok_or_else(|| Error::Data(format!("proposals reference unknown image `{id}`")))?;
        out.extend(detect(net, img, boxes, cfg)?);
    }
    Ok(out)
}

pub const DETECTIONS_HEADER: &str = "image_id,class,score,x1,y1,x2,y2,expert";

/// Write detections as CSV, classes by name (1-based ids index `names`).
pub fn write_detections_csv(path: &Path, dets: &[Detection], names: &[String]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{DETECTIONS_HEADER}")?;
    for d in dets {
        let name = names
            .get(d.class - 1)
            .ok_or_else(|| Error::Data(format!("detection class {} has no name", d.class)))?;
        let [x1, y1, x2, y2] = d.bbox.coords();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            d.image_id, name, d.score, x1, y1, x2, y2, d.expert
        )?;
    }
    Ok(())
}

pub fn read_detections_csv(path: &Path, names: &[String]) -> Result<Vec<Detection>> {
    let text = fs::read_to_string(path)?;
    let fail = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == DETECTIONS_HEADER => {}
        Some((_, h)) => return Err(fail(1, format!("unexpected header `{h}`"))),
        None => return Err(fail(1, "empty file".into())),
    }
    let mut dets = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(fail(i + 1, format!("{} fields, expected 8", parts.len())));
        }
        let class = names
            .iter()
            .position(|n| n == parts[1])
            .map(|p| p + 1)
            .ok_or_else(|| fail(i + 1, format!("unknown class `{}`", parts[1])))?;
        let num = |j: usize| -> Result<f64> {
            parts[j]
                .parse::<f64>()
                .map_err(|e| fail(i + 1, format!("field {}: {e}", j + 1)))
        };
        let bbox = BBox::new(num(3)?, num(4)?, num(5)?, num(6)?)
            .map_err(|e| fail(i + 1, e.to_string()))?;
        dets.push(Detection {
            image_id: parts[0].to_string(),
            class,
            score: num(2)?,
            bbox,
            expert: parts[7]
                .parse()
                .map_err(|e: String| fail(i + 1, e))?,
        });
    }
    Ok(dets)
}
