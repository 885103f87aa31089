//! Shape-based expert routing.
//!
//! Every RoI is summarized by `theta = log2(w / h)` and handed to one or more
//! of three experts: `H` (horizontally elongated), `S` (square-ish), and `V`
//! (vertically elongated). Training assignment is deliberately overlapping so
//! each expert sees boundary shapes; test assignment is a strict partition.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::geometry::{aspect_log_ratio, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExpertId {
    H,
    S,
    V,
}

impl ExpertId {
    pub const ALL: [ExpertId; 3] = [ExpertId::H, ExpertId::S, ExpertId::V];

    pub fn index(self) -> usize {
        match self {
            ExpertId::H => 0,
            ExpertId::S => 1,
            ExpertId::V => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExpertId::H => "H",
            ExpertId::S => "S",
            ExpertId::V => "V",
        }
    }
}

impl fmt::Display for ExpertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExpertId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "H" => Ok(ExpertId::H),
            "S" => Ok(ExpertId::S),
            "V" => Ok(ExpertId::V),
            other => Err(format!("unknown expert `{other}` (expected H, S, or V)")),
        }
    }
}

/// Small set of experts, at most three members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExpertSet(u8);

impl ExpertSet {
    pub fn empty() -> Self {
        ExpertSet(0)
    }

    pub fn insert(&mut self, e: ExpertId) {
        self.0 |= 1 << e.index();
    }

    pub fn contains(&self, e: ExpertId) -> bool {
        self.0 & (1 << e.index()) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = ExpertId> + '_ {
        ExpertId::ALL.into_iter().filter(|e| self.contains(*e))
    }
}

impl FromIterator<ExpertId> for ExpertSet {
    fn from_iter<T: IntoIterator<Item = ExpertId>>(iter: T) -> Self {
        let mut s = ExpertSet::empty();
        for e in iter {
            s.insert(e);
        }
        s
    }
}

impl fmt::Display for ExpertSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, e) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, "}}")
    }
}

/// Theta boundaries for both assignment rules. The defaults are the fixed
/// constants the rest of the pipeline assumes; they are carried in run
/// manifests so a run's routing is fully described by its config echo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterBounds {
    /// Train: H takes theta >= this.
    pub train_h_min: f64,
    /// Train: S takes |theta| <= this.
    pub train_s_band: f64,
    /// Test: H takes theta > this, V takes theta < -this, S the rest.
    pub test_split: f64,
}

impl Default for RouterBounds {
    fn default() -> Self {
        RouterBounds {
            train_h_min: 0.0,
            train_s_band: 1.0,
            test_split: 0.5,
        }
    }
}

/// Whether RoIs are routed by shape to the three experts, or all handed to a
/// single `S` head (the one-expert baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingPolicy {
    ByShape,
    SingleExpert,
}

/// Training assignment: overlapping, never empty.
///
/// `H` iff theta >= 0; `S` iff -1 <= theta <= 1; `V` iff theta <= 0.
pub fn train_categories(theta: f64) -> ExpertSet {
    train_categories_with(&RouterBounds::default(), theta)
}

pub fn train_categories_with(b: &RouterBounds, theta: f64) -> ExpertSet {
    let mut set = ExpertSet::empty();
    if theta >= b.train_h_min {
        set.insert(ExpertId::H);
    }
    if theta >= -b.train_s_band && theta <= b.train_s_band {
        set.insert(ExpertId::S);
    }
    if theta <= b.train_h_min {
        set.insert(ExpertId::V);
    }
    set
}

/// Test assignment: a strict partition of the theta axis.
///
/// `H` iff theta > 0.5; `V` iff theta < -0.5; `S` otherwise (ties at the
/// half-unit boundaries go to `S`).
pub fn test_category(theta: f64) -> ExpertId {
    test_category_with(&RouterBounds::default(), theta)
}

pub fn test_category_with(b: &RouterBounds, theta: f64) -> ExpertId {
    if theta > b.test_split {
        ExpertId::H
    } else if theta < -b.test_split {
        ExpertId::V
    } else {
        ExpertId::S
    }
}

/// Convenience: route a box directly.
pub fn test_category_for_box(bbox: &BBox) -> ExpertId {
    test_category(aspect_log_ratio(bbox))
}

pub fn test_category_for_box_with(b: &RouterBounds, bbox: &BBox) -> ExpertId {
    test_category_with(b, aspect_log_ratio(bbox))
}
