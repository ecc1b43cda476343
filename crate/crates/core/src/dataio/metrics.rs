use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Precision;

pub const METRICS_COLUMNS: [&str; 9] =
    ["epoch", "train_acc", "test_acc", "train_loss", "test_loss", "wall_time", "overflow", "underflow", "nan"];

/// One row of a training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    /// Seconds spent in the epoch, training and evaluation.
    pub wall_time: f64,
    pub overflow: u64,
    pub underflow: u64,
    pub nan: u64,
}

/// The JSON document written next to a metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub precision: Precision,
    pub epochs: usize,
    pub final_train_acc: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub final_test_loss: Option<f64>,
    pub overflow: u64,
    pub underflow: u64,
    pub nan: u64,
    pub wall_time: f64,
    /// `|acc16 - acc32|` on the test set, present for comparison runs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub acc_gap: Option<f64>,
}

impl MetricsSummary {
    pub fn from_history(precision: Precision, history: &[EpochMetrics]) -> MetricsSummary {
        let last = history.last();
        MetricsSummary {
            precision,
            epochs: history.len(),
            final_train_acc: last.map(|m| m.train_acc),
            final_test_acc: last.map(|m| m.test_acc),
            final_test_loss: last.map(|m| m.test_loss),
            overflow: history.iter().map(|m| m.overflow).sum(),
            underflow: history.iter().map(|m| m.underflow).sum(),
            nan: history.iter().map(|m| m.nan).sum(),
            wall_time: history.iter().map(|m| m.wall_time).sum(),
            acc_gap: None,
        }
    }
}

/// Write `history` as CSV to `path` and `summary` as JSON beside it (same
/// stem, `.json` extension). Returns the JSON path.
pub fn write_metrics(history: &[EpochMetrics], summary: &MetricsSummary, path: &Path) -> Result<PathBuf> {
    let mut csv = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(csv, "{}", METRICS_COLUMNS.join(","))?;
    for m in history {
        writeln!(
            csv,
            "{},{},{},{},{},{:.3},{},{},{}",
            m.epoch, m.train_acc, m.test_acc, m.train_loss, m.test_loss, m.wall_time, m.overflow, m.underflow, m.nan
        )?;
    }
    csv.flush()?;
    let json = path.with_extension("json");
    std::fs::write(&json, serde_json::to_string_pretty(summary)?)?;
    Ok(json)
}
