//! Multi-expert region-based object detection on synthetic imagery.
//!
//! The pipeline: generate candidate regions (either an exhaustive multi-scale
//! sliding grid or sparse simulated proposals), route each region to one of
//! three shape experts (horizontal / square / vertical) by its log aspect
//! ratio, train a small shared-trunk detection network with one batch per
//! expert per iteration, then fuse per-expert detections at test time.
//!
//! Everything is seeded and deterministic: the same config and seed produce
//! bit-identical datasets, weights, and reports.

pub mod dataset;
pub mod detect;
mod error;
pub mod eval;
pub mod exhaustive;
pub mod geometry;
pub mod labeling;
pub mod network;
pub mod proposals;
pub mod router;
pub mod util;

pub use error::{Error, Result};
