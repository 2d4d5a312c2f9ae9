//! Metrics records and the per-run output files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of `metrics.jsonl`, written after every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub stage: usize,
    /// Global epoch counter, starting at 1.
    pub epoch: usize,
    pub epoch_in_stage: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub weight_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

pub fn write_metrics_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Column order of `summary.csv`.
pub const SUMMARY_COLUMNS: [&str; 18] = [
    "run_id",
    "status",
    "setting",
    "reinit",
    "distill_beta",
    "stages",
    "epochs_per_stage",
    "lr",
    "weight_decay",
    "noise_q",
    "total_steps",
    "best_stage",
    "best_epoch",
    "best_val_acc",
    "best_test_acc",
    "final_test_acc",
    "final_weight_norm",
    "noisy_memorization",
];

/// The single data row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub status: String,
    pub setting: String,
    pub reinit: String,
    pub distill_beta: f64,
    pub stages: usize,
    pub epochs_per_stage: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub noise_q: f64,
    pub total_steps: u64,
    pub best_stage: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_test_acc: f64,
    pub final_test_acc: f64,
    pub final_weight_norm: f64,
    pub noisy_memorization: Option<f64>,
}

pub fn write_summary_csv(path: &Path, summary: &RunSummary) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Harness(format!("{other:?}")),
    };
    // serde's field order equals SUMMARY_COLUMNS
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.serialize(summary).map_err(io)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<RunSummary> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Harness(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| Error::Harness(e.to_string()))?.clone();
    if headers.iter().ne(SUMMARY_COLUMNS.iter().copied()) {
        return Err(Error::Harness(format!(
            "{}: unexpected summary columns",
            path.display()
        )));
    }
    r.deserialize()
        .next()
        .ok_or_else(|| Error::Harness(format!("{}: no summary row", path.display())))?
        .map_err(|e| Error::Harness(e.to_string()))
}
