//! Weight files and training logs.
//!
//! Weights are stored as self-describing JSON: the network config plus one
//! record per layer carrying its spec and parameters. Loading rebuilds the
//! layer tree from the stored config and fails on the first layer whose
//! name or shape does not line up.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::{LayerSpec, LogRow, LossBreakdown, NetConfig, Network};
use crate::{Error, Result};

const WEIGHT_FORMAT: &str = "mexdet-weights-v1";

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    #[serde(flatten)]
    spec: LayerSpec,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format: String,
    config: NetConfig,
    layers: Vec<LayerRecord>,
}

pub fn save_weights(path: &Path, net: &Network) -> Result<()> {
    let file = WeightFile {
        format: WEIGHT_FORMAT.into(),
        config: net.config.clone(),
        layers: net
            .layers()
            .into_iter()
            .map(|l| LayerRecord {
                spec: l.spec.clone(),
                w: l.w.clone(),
                b: l.b.clone(),
            })
            .collect(),
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &file).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Rebuild a network from a weight file. The stored config dictates the
/// architecture; every stored layer must match it by name and shape.
pub fn load_weights(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path)?;
    let file: WeightFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    if file.format != WEIGHT_FORMAT {
        return Err(Error::Parse {
            path: path.display().to_string(),
            msg: format!("unknown weight format `{}`", file.format),
        });
    }
    let mut net = Network::build(&file.config)?;
    let mut records: BTreeMap<&str, &LayerRecord> = BTreeMap::new();
    for rec in &file.layers {
        if records.insert(&rec.spec.name, rec).is_some() {
            return Err(Error::WeightMismatch {
                layer: rec.spec.name.clone(),
                msg: "listed twice".into(),
            });
        }
    }
    let expected: Vec<String> = net.layers().iter().map(|l| l.spec.name.clone()).collect();
    for layer in net.layers_mut() {
        let rec = records.remove(layer.spec.name.as_str()).ok_or_else(|| {
            Error::WeightMismatch {
                layer: layer.spec.name.clone(),
                msg: "missing from file".into(),
            }
        })?;
        if rec.spec.shape != layer.spec.shape {
            return Err(Error::WeightMismatch {
                layer: layer.spec.name.clone(),
                msg: format!(
                    "shape {:?} does not match the configured {:?}",
                    rec.spec.shape, layer.spec.shape
                ),
            });
        }
        if rec.w.len() != layer.w.len() || rec.b.len() != layer.b.len() {
            return Err(Error::WeightMismatch {
                layer: layer.spec.name.clone(),
                msg: format!(
                    "{} weights and {} biases stored, expected {} and {}",
                    rec.w.len(),
                    rec.b.len(),
                    layer.w.len(),
                    layer.b.len()
                ),
            });
        }
        layer.w.copy_from_slice(&rec.w);
        layer.b.copy_from_slice(&rec.b);
    }
    if let Some((name, _)) = records.into_iter().next() {
        return Err(Error::WeightMismatch {
            layer: name.to_string(),
            msg: format!("not part of the configured architecture {expected:?}"),
        });
    }
    Ok(net)
}

/// Load weights and require them to fit `expected`: same layer tree and the
/// same input/output dimensions. The error names the first layer that
/// differs.
pub fn load_weights_expecting(path: &Path, expected: &NetConfig) -> Result<Network> {
    let net = load_weights(path)?;
    let want = expected.blueprint();
    let got = net.config.blueprint();
    for (w, g) in want.iter().zip(&got) {
        if w.0 != g.0 {
            return Err(Error::WeightMismatch {
                layer: w.0.clone(),
                msg: format!("file has `{}` in its place", g.0),
            });
        }
        if w.1 != g.1 {
            return Err(Error::WeightMismatch {
                layer: w.0.clone(),
                msg: format!("file shape {:?}, expected {:?}", g.1, w.1),
            });
        }
    }
    if got.len() != want.len() {
        let (name, longer) = if got.len() > want.len() {
            (got[want.len()].0.clone(), "file")
        } else {
            (want[got.len()].0.clone(), "expected architecture")
        };
        return Err(Error::WeightMismatch {
            layer: name,
            msg: format!("only present in the {longer}"),
        });
    }
    let same_io = net.config.input_w == expected.input_w
        && net.config.input_h == expected.input_h
        && net.config.normalize_targets == expected.normalize_targets;
    if !same_io {
        return Err(Error::InvalidConfig(format!(
            "weights expect {}x{} input (normalize_targets {}), caller wants {}x{} ({})",
            net.config.input_w,
            net.config.input_h,
            net.config.normalize_targets,
            expected.input_w,
            expected.input_h,
            expected.normalize_targets
        )));
    }
    Ok(net)
}

pub const TRAIN_LOG_HEADER: &str =
    "iteration,lr,total,softmax_H,smooth_H,softmax_S,smooth_S,softmax_V,smooth_V,reg";

pub fn write_train_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{TRAIN_LOG_HEADER}")?;
    for r in rows {
        let l = &r.loss;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.lr,
            l.total,
            l.softmax[0],
            l.smooth[0],
            l.softmax[1],
            l.smooth[1],
            l.softmax[2],
            l.smooth[2],
            l.reg
        )?;
    }
    Ok(())
}

pub fn read_train_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path)?;
    let fail = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRAIN_LOG_HEADER => {}
        Some((_, h)) => return Err(fail(1, format!("unexpected header `{h}`"))),
        None => return Err(fail(1, "empty log".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 10 {
            return Err(fail(i + 1, format!("{} fields, expected 10", parts.len())));
        }
        let num = |j: usize| -> Result<f64> {
            parts[j]
                .parse::<f64>()
                .map_err(|e| fail(i + 1, format!("field {}: {e}", j + 1)))
        };
        rows.push(LogRow {
            iteration: parts[0]
                .parse()
                .map_err(|e| fail(i + 1, format!("iteration: {e}")))?,
            lr: num(1)?,
            loss: LossBreakdown {
                total: num(2)?,
                softmax: [num(3)?, num(5)?, num(7)?],
                smooth: [num(4)?, num(6)?, num(8)?],
                reg: num(9)?,
            },
        });
    }
    Ok(rows)
}
