//! Boxes, overlap, aspect measure, and the box-regression parameterization.
//!
//! Boxes live in continuous coordinates: `[x1, y1, x2, y2]` with `x2 > x1`
//! and `y2 > y1`, width `x2 - x1` (no pixel "+1"). Degenerate or non-finite
//! boxes are rejected at construction so every downstream consumer can rely
//! on positive width and height.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Axis-aligned box. Serializes as a bare `[x1, y1, x2, y2]` array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite coordinates [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::InvalidBox(format!(
                "degenerate extent [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Mirror across the main diagonal (swap x and y).
    pub fn transpose(&self) -> BBox {
        BBox {
            x1: self.y1,
            y1: self.x1,
            x2: self.y2,
            y2: self.x2,
        }
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Exact bit pattern of the coordinates, for dedup and set comparison.
    pub fn bits(&self) -> [u64; 4] {
        [
            self.x1.to_bits(),
            self.y1.to_bits(),
            self.x2.to_bits(),
            self.y2.to_bits(),
        ]
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(deserializer)?;
        BBox::new(x1, y1, x2, y2).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Intersection over union. Zero for disjoint or merely touching boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Log-ratio shape measure `theta = log2(w / h)`.
///
/// Positive for wide boxes, negative for tall ones, zero for squares. A box
/// and its transpose have exactly opposite theta.
pub fn aspect_log_ratio(b: &BBox) -> f64 {
    (b.width() / b.height()).log2()
}

/// Offsets that map a proposal onto a ground-truth box: translation scaled by
/// proposal size, log size ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionTarget {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

pub fn encode_regression(proposal: &BBox, gt: &BBox) -> RegressionTarget {
    let (px, py) = proposal.center();
    let (gx, gy) = gt.center();
    let pw = proposal.width();
    let ph = proposal.height();
    RegressionTarget {
        tx: (gx - px) / pw,
        ty: (gy - py) / ph,
        tw: (gt.width() / pw).ln(),
        th: (gt.height() / ph).ln(),
    }
}

/// Inverse of [`encode_regression`]. Fails if the offsets blow the result up
/// past finite range (possible with untrained regression outputs).
pub fn decode_regression(proposal: &BBox, t: &RegressionTarget) -> Result<BBox> {
    let (px, py) = proposal.center();
    let pw = proposal.width();
    let ph = proposal.height();
    let gx = px + t.tx * pw;
    let gy = py + t.ty * ph;
    let gw = pw * t.tw.exp();
    let gh = ph * t.th.exp();
    BBox::new(gx - 0.5 * gw, gy - 0.5 * gh, gx + 0.5 * gw, gy + 0.5 * gh)
}

/// Huber-style regression penalty: quadratic inside |x| < 1, linear outside.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Derivative of [`smooth_l1`]; continuous everywhere.
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Clamp a box to `[0, w] x [0, h]`. A box that ends up with no positive
/// extent inside the image is an error.
pub fn clip_to_image(b: &BBox, w: f64, h: f64) -> Result<BBox> {
    let x1 = b.x1.clamp(0.0, w);
    let y1 = b.y1.clamp(0.0, h);
    let x2 = b.x2.clamp(0.0, w);
    let y2 = b.y2.clamp(0.0, h);
    if x2 <= x1 || y2 <= y1 {
        return Err(Error::InvalidBox(format!(
            "box [{}, {}, {}, {}] lies outside the {w}x{h} image",
            b.x1, b.y1, b.x2, b.y2
        )));
    }
    BBox::new(x1, y1, x2, y2)
}
