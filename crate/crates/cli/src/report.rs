//! CSV report formats owned by the CLI. Floats are written in shortest
//! round-trip form; unmeasurable entries (no ground truth for the class)
//! are the literal `none`.

use std::io::{BufWriter, Write};
use std::path::Path;

use mexdet_core::eval::{ApReport, ExpertEval, HistBin, RecallPoint};
use mexdet_core::util::fmt_f64;

use crate::errors::{CliError, CliResult};

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "none".into())
}

fn create(path: &Path) -> CliResult<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(std::fs::File::create(path).map_err(
        |e| CliError::Data(format!("{}: {e}", path.display())),
    )?))
}

/// `metric,class,value` rows: one `ap` row per class, a `map` row, and an
/// optional `map_coco` row (mean over the IoU 0.50:0.05:0.95 grid).
pub fn write_map_report(
    path: &Path,
    report: &ApReport,
    names: &[String],
    coco: Option<Option<f64>>,
) -> CliResult<()> {
    if report.per_class.len() != names.len() {
        return Err(CliError::Internal(format!(
            "AP report covers {} classes but the dataset names {}",
            report.per_class.len(),
            names.len()
        )));
    }
    let mut f = create(path)?;
    writeln!(f, "metric,class,value")?;
    for (name, ap) in names.iter().zip(&report.per_class) {
        writeln!(f, "ap,{name},{}", opt(*ap))?;
    }
    writeln!(f, "map,all,{}", opt(report.map))?;
    if let Some(c) = coco {
        writeln!(f, "map_coco,all,{}", opt(c))?;
    }
    Ok(())
}

pub fn write_recall_curve(path: &Path, points: &[RecallPoint]) -> CliResult<()> {
    let mut f = create(path)?;
    writeln!(f, "iou,recall,matched,total")?;
    for p in points {
        writeln!(
            f,
            "{},{},{},{}",
            fmt_f64(p.iou),
            fmt_f64(p.recall),
            p.matched,
            p.total
        )?;
    }
    Ok(())
}

pub fn write_iou_hist(path: &Path, bins: &[HistBin]) -> CliResult<()> {
    let mut f = create(path)?;
    writeln!(f, "lo,hi,count")?;
    for b in bins {
        writeln!(f, "{},{},{}", fmt_f64(b.lo), fmt_f64(b.hi), b.count)?;
    }
    Ok(())
}

/// One row per expert run alone over every region (the shape-routed run is
/// what `detect`/`eval` already report, so it is not repeated here).
pub fn write_per_expert(path: &Path, runs: &[ExpertEval], names: &[String]) -> CliResult<()> {
    let mut f = create(path)?;
    let ap_cols: Vec<String> = names.iter().map(|n| format!("ap_{n}")).collect();
    writeln!(f, "expert,{},map", ap_cols.join(","))?;
    for run in runs {
        let Some(e) = run.forced else { continue };
        if run.per_class.len() != names.len() {
            return Err(CliError::Internal(format!(
                "per-expert row covers {} classes but the dataset names {}",
                run.per_class.len(),
                names.len()
            )));
        }
        let aps: Vec<String> = run.per_class.iter().map(|a| opt(*a)).collect();
        writeln!(f, "{e},{},{}", aps.join(","), opt(run.map))?;
    }
    Ok(())
}
