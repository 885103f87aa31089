//! Sparse proposal ingest: loading external proposal files, simulating a
//! selective-search-style proposer on synthetic data, and merging RoI sets.
//!
//! On-disk schema (JSON): `[{image_id, width, height, boxes: [[x1,y1,x2,y2],
//! ...], source?}, ...]`. The optional `source` tag defaults to `selective`
//! for externally supplied files. Dense window files are JSON Lines, one
//! `{image_id, windows: [[x1,y1,x2,y2], ...]}` record per image.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::geometry::{clip_to_image, BBox};
use crate::util::rng_for;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    Selective,
    Exhaustive,
    Simulated,
    /// Result of merging sets with different sources.
    Combined,
}

/// Sparse RoIs for one image, clipped to its extent.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub boxes: Vec<BBox>,
    pub source: ProposalSource,
}

#[derive(Serialize, Deserialize)]
struct ProposalRecord {
    image_id: String,
    width: f64,
    height: f64,
    boxes: Vec<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<ProposalSource>,
}

/// Known image extents, keyed by id. Proposal files may only reference these.
pub type ImageExtents = BTreeMap<String, (f64, f64)>;

/// Load a proposal file. Boxes are clipped to the declared extent; boxes
/// that are degenerate or entirely outside after clipping are dropped.
/// Records referencing ids absent from `extents` are an error.
pub fn load_proposals(path: &Path, extents: &ImageExtents) -> Result<BTreeMap<String, ProposalSet>> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<ProposalRecord> =
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: format!("line {}: {}", e.line(), e),
        })?;
    let mut out = BTreeMap::new();
    for rec in records {
        if !extents.contains_key(&rec.image_id) {
            return Err(Error::Data(format!(
                "{}: unknown image_id `{}`",
                path.display(),
                rec.image_id
            )));
        }
        let mut boxes = Vec::with_capacity(rec.boxes.len());
        for [x1, y1, x2, y2] in rec.boxes {
            let Ok(b) = BBox::new(x1, y1, x2, y2) else {
                continue;
            };
            if let Ok(c) = clip_to_image(&b, rec.width, rec.height) {
                boxes.push(c);
            }
        }
        out.insert(
            rec.image_id.clone(),
            ProposalSet {
                image_id: rec.image_id,
                width: rec.width,
                height: rec.height,
                boxes,
                source: rec.source.unwrap_or(ProposalSource::Selective),
            },
        );
    }
    Ok(out)
}

pub fn save_proposals(path: &Path, sets: &BTreeMap<String, ProposalSet>) -> Result<()> {
    let records: Vec<ProposalRecord> = sets
        .values()
        .map(|s| ProposalRecord {
            image_id: s.image_id.clone(),
            width: s.width,
            height: s.height,
            boxes: s.boxes.iter().map(|b| b.coords()).collect(),
            source: Some(s.source),
        })
        .collect();
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &records)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Stand-in for an external proposer: per ground-truth box, four corner-
/// jittered copies (each corner moved uniformly within +-jitter of the box
/// side), plus `n_random` uniform boxes per image. Deterministic in `seed`.
pub fn simulate_proposals(
    image_id: &str,
    width: f64,
    height: f64,
    gts: &[BBox],
    jitter: f64,
    n_random: usize,
    seed: u64,
) -> Result<ProposalSet> {
    if !(0.0..=0.5).contains(&jitter) {
        return Err(Error::InvalidConfig(format!(
            "jitter {jitter} outside [0, 0.5]"
        )));
    }
    let mut rng = rng_for(seed, &format!("simulate/{image_id}"));
    let mut boxes = Vec::new();
    for gt in gts {
        for _ in 0..4 {
            let w = gt.width();
            let h = gt.height();
            let jittered = BBox::new(
                gt.x1() + rng.gen_range(-jitter..=jitter) * w,
                gt.y1() + rng.gen_range(-jitter..=jitter) * h,
                gt.x2() + rng.gen_range(-jitter..=jitter) * w,
                gt.y2() + rng.gen_range(-jitter..=jitter) * h,
            );
            // jitter <= 0.5 keeps corners ordered except at the exact
            // boundary; fall back to the unjittered box there.
            let candidate = jittered.unwrap_or(*gt);
            if let Ok(c) = clip_to_image(&candidate, width, height) {
                boxes.push(c);
            }
        }
    }
    for _ in 0..n_random {
        let w = rng.gen_range(8.0..=(width * 0.8));
        let h = rng.gen_range(8.0..=(height * 0.8));
        let x1 = rng.gen_range(0.0..=(width - w));
        let y1 = rng.gen_range(0.0..=(height - h));
        boxes.push(BBox::new(x1, y1, x1 + w, y1 + h)?);
    }
    Ok(ProposalSet {
        image_id: image_id.to_string(),
        width,
        height,
        boxes,
        source: ProposalSource::Simulated,
    })
}

/// Concatenate two RoI sets for the same image, dropping exact duplicates
/// (bitwise coordinate equality). Order is stable: all of `a`, then the
/// novel part of `b`.
pub fn merge_roi_sets(a: &ProposalSet, b: &ProposalSet) -> Result<ProposalSet> {
    if a.image_id != b.image_id {
        return Err(Error::Data(format!(
            "cannot merge proposals for different images `{}` and `{}`",
            a.image_id, b.image_id
        )));
    }
    if a.width != b.width || a.height != b.height {
        return Err(Error::Data(format!(
            "extent mismatch for `{}`: {}x{} vs {}x{}",
            a.image_id, a.width, a.height, b.width, b.height
        )));
    }
    let mut seen: std::collections::HashSet<[u64; 4]> =
        a.boxes.iter().map(|b| b.bits()).collect();
    let mut boxes = a.boxes.clone();
    for bx in &b.boxes {
        if seen.insert(bx.bits()) {
            boxes.push(*bx);
        }
    }
    let source = if a.source == b.source {
        a.source
    } else {
        ProposalSource::Combined
    };
    Ok(ProposalSet {
        image_id: a.image_id.clone(),
        width: a.width,
        height: a.height,
        boxes,
        source,
    })
}

#[derive(Serialize, Deserialize)]
struct WindowRecord {
    image_id: String,
    windows: Vec<[f64; 4]>,
}

/// Write dense window sets as JSON Lines, one record per image, in map order.
pub fn save_windows(path: &Path, sets: &BTreeMap<String, Vec<BBox>>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (image_id, windows) in sets {
        let rec = WindowRecord {
            image_id: image_id.clone(),
            windows: windows.iter().map(|b| b.coords()).collect(),
        };
        serde_json::to_writer(&mut f, &rec)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Load a dense window file (JSON Lines). Ids must be known.
pub fn load_windows(path: &Path, extents: &ImageExtents) -> Result<BTreeMap<String, Vec<BBox>>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = BTreeMap::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WindowRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: format!("line {}: {}", lineno + 1, e),
        })?;
        if !extents.contains_key(&rec.image_id) {
            return Err(Error::Data(format!(
                "{}: unknown image_id `{}`",
                path.display(),
                rec.image_id
            )));
        }
        let mut windows = Vec::with_capacity(rec.windows.len());
        for [x1, y1, x2, y2] in rec.windows {
            windows.push(BBox::new(x1, y1, x2, y2)?);
        }
        out.insert(rec.image_id, windows);
    }
    Ok(out)
}

/// Turn a window list into a ProposalSet (for merge and for dense training).
pub fn windows_as_set(image_id: &str, width: f64, height: f64, windows: &[BBox]) -> ProposalSet {
    ProposalSet {
        image_id: image_id.to_string(),
        width,
        height,
        boxes: windows.to_vec(),
        source: ProposalSource::Exhaustive,
    }
}
