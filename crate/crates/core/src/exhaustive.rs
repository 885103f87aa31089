//! Exhaustive multi-scale sliding-window generation.
//!
//! For each configured aspect ratio the initial window is the largest box of
//! that ratio that fits the image; every following scale divides both sides
//! by `2^(1/4)`, so four steps halve the window. At each scale the window
//! slides with a stride of a quarter of its short side, plus a flush-right /
//! flush-bottom position so the image edge is always covered. Generation
//! stops once the short side would drop below `min_side` (25 px by default).
//!
//! The result is a dense, training-time RoI set; test-time detection uses
//! sparse proposals instead.
//!
//! Determinism contract: window coordinates are produced by exactly the
//! expressions below (`k * stride` for grid positions, `extent - side` for
//! the flush position, sizes via `initial / decay.powi(k)`), so two runs on
//! any machine produce bit-identical sets.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::geometry::BBox;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveConfig {
    /// Window w:h ratios, tried in order.
    pub ratios: Vec<f64>,
    /// Scales stop once min(w, h) would fall below this.
    pub min_side: f64,
    /// Stride as a fraction of the short side.
    pub stride_factor: f64,
    /// Per-step size divisor; four steps at the default halve the window.
    pub scale_decay: f64,
}

impl Default for ExhaustiveConfig {
    fn default() -> Self {
        ExhaustiveConfig {
            ratios: vec![4.0, 2.0, 1.0, 0.5, 0.25],
            min_side: 25.0,
            stride_factor: 0.25,
            scale_decay: 2f64.powf(0.25),
        }
    }
}

impl ExhaustiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::InvalidConfig(
                "ratios must be a non-empty list of positive values".into(),
            ));
        }
        if !(self.min_side > 0.0) {
            return Err(Error::InvalidConfig("min_side must be positive".into()));
        }
        if !(self.stride_factor > 0.0) {
            return Err(Error::InvalidConfig("stride_factor must be positive".into()));
        }
        if !(self.scale_decay > 1.0) {
            return Err(Error::InvalidConfig("scale_decay must exceed 1".into()));
        }
        Ok(())
    }
}

/// One scale of the schedule for a single ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleStep {
    pub ratio: f64,
    pub w: f64,
    pub h: f64,
    pub stride: f64,
}

/// All scales for one ratio on a `width x height` image, largest first.
/// Empty when even the initial window's short side is under `min_side`.
pub fn window_schedule(width: f64, height: f64, ratio: f64, cfg: &ExhaustiveConfig) -> Vec<ScaleStep> {
    // Initial window: w/h = ratio with the larger relative side exactly
    // filling the image.
    let w0 = if ratio * height <= width {
        ratio * height
    } else {
        width
    };
    let mut steps = Vec::new();
    for k in 0.. {
        let w = w0 / cfg.scale_decay.powi(k);
        let h = w / ratio;
        if w.min(h) < cfg.min_side {
            break;
        }
        steps.push(ScaleStep {
            ratio,
            w,
            h,
            stride: cfg.stride_factor * w.min(h),
        });
    }
    steps
}

/// Verify the four-steps-halve property of a schedule: `step[k+4]` has half
/// the width of `step[k]` within 1e-9 relative error. Needs at least five
/// steps to say anything.
pub fn size_halving_check(schedule: &[ScaleStep]) -> Result<bool> {
    if schedule.len() < 5 {
        return Err(Error::Data(format!(
            "size_halving_check needs at least 5 steps, got {}",
            schedule.len()
        )));
    }
    for k in 0..schedule.len() - 4 {
        let want = schedule[k].w / 2.0;
        let got = schedule[k + 4].w;
        if ((got - want) / want).abs() > 1e-9 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Sliding positions along one axis: `k * stride` while the window fits,
/// plus the flush position `extent - side` if it is not already the last
/// grid position. Returned as `(lo, hi)` pairs; the flush window ends
/// exactly at `extent`.
fn axis_positions(extent: f64, side: f64, stride: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut k = 0f64;
    loop {
        let lo = k * stride;
        if lo + side > extent {
            break;
        }
        out.push((lo, lo + side));
        k += 1.0;
    }
    let flush = extent - side;
    match out.last() {
        Some((last_lo, _)) if *last_lo == flush => {}
        _ => out.push((flush, extent)),
    }
    out
}

/// The full deduplicated window set for an image, ordered by ratio, then
/// scale, then y, then x (first occurrence wins on exact duplicates).
pub fn exhaustive_windows(width: f64, height: f64, cfg: &ExhaustiveConfig) -> Result<Vec<BBox>> {
    cfg.validate()?;
    if !(width >= 1.0 && height >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "image extent {width}x{height} must be at least 1x1"
        )));
    }
    let mut seen: HashSet<[u64; 4]> = HashSet::new();
    let mut out = Vec::new();
    for &ratio in &cfg.ratios {
        for step in window_schedule(width, height, ratio, cfg) {
            let ys = axis_positions(height, step.h, step.stride);
            let xs = axis_positions(width, step.w, step.stride);
            for &(y1, y2) in &ys {
                for &(x1, x2) in &xs {
                    let b = BBox::new(x1, y1, x2, y2)?;
                    if seen.insert(b.bits()) {
                        out.push(b);
                    }
                }
            }
        }
    }
    Ok(out)
}
