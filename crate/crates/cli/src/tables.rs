//! Human-readable tables and their CSV twins.

use std::path::Path;

use serde::Serialize;

use scd_core::scd::{Metric, Metrics};

use crate::Failure;

/// One line of the detection table.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub interval_s: f64,
    pub metric: String,
    pub threshold: Option<f64>,
    pub boundaries: usize,
    pub changes: usize,
    pub pe: f64,
    pub f1: f64,
    pub fnr: f64,
    pub fpr: f64,
}

impl MetricRow {
    pub fn new(interval_s: f64, metric: Metric, threshold: Option<f64>, m: &Metrics) -> Self {
        MetricRow {
            interval_s,
            metric: metric.to_string(),
            threshold,
            boundaries: (m.positives() + m.negatives()).round() as usize,
            changes: m.positives().round() as usize,
            pe: m.pe,
            f1: m.f1,
            fnr: m.fnr,
            fpr: m.fpr,
        }
    }
}

pub fn metric_header() -> String {
    format!(
        "{:>9} {:<18} {:>9} {:>6} {:>7} {:>8} {:>6} {:>8} {:>8}",
        "interval", "metric", "threshold", "bnds", "changes", "Pe%", "F1", "FNR%", "FPR%"
    )
}

pub fn metric_line(r: &MetricRow) -> String {
    format!(
        "{:>8}s {:<18} {:>9} {:>6} {:>7} {:>8.3} {:>6.3} {:>8.3} {:>8.3}",
        r.interval_s,
        r.metric,
        r.threshold.map_or("-".into(), |t| format!("{t:.4}")),
        r.boundaries,
        r.changes,
        100.0 * r.pe,
        r.f1,
        100.0 * r.fnr,
        100.0 * r.fpr
    )
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}
