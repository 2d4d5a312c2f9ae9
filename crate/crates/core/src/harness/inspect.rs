use std::path::Path;

use super::metrics::{read_metrics_jsonl, read_summary_csv, MetricsRecord, RunSummary};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, CheckpointHeader};

/// Contents of a finished run directory.
#[derive(Debug, Clone)]
pub struct RunInspection {
    pub summary: RunSummary,
    pub metrics: Vec<MetricsRecord>,
    pub best: Option<CheckpointHeader>,
    pub teacher_files: Vec<String>,
}

pub fn inspect_run(dir: &Path) -> Result<RunInspection> {
    if !dir.is_dir() {
        return Err(Error::Harness(format!("no run directory at {}", dir.display())));
    }
    let summary = read_summary_csv(&dir.join("summary.csv"))?;
    let metrics = read_metrics_jsonl(&dir.join("metrics.jsonl"))?;
    let ckpt = dir.join("best.ckpt");
    let best = if ckpt.exists() {
        Some(load_checkpoint(&ckpt)?.header)
    } else {
        None
    };
    let mut teacher_files: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("teacher_stage") && n.ends_with(".bin"))
        .collect();
    teacher_files.sort();
    Ok(RunInspection {
        summary,
        metrics,
        best,
        teacher_files,
    })
}
