//! Experiment orchestration on top of the staged training loop.

mod config;
mod inspect;
mod metrics;
mod run;
mod studies;

pub use config::*;
pub use inspect::{inspect_run, RunInspection};
pub use metrics::{
    read_metrics_jsonl, read_summary_csv, write_metrics_jsonl, write_summary_csv, MetricsRecord, RunSummary,
    SUMMARY_COLUMNS,
};
pub use run::{
    accuracy, prepare_data, run_experiment, run_prepared, BestCheckpoint, BoundaryRecord, PreparedData, RunOutcome,
    RunStatus,
};
pub use studies::{
    choose_cell, grid_search, grid_search_prepared, noise_study, online_sim, stage_sweep, study_threads, BudgetRow,
    ChunkPoint, GridCell, GridResult, Method, NoiseRow, NoiseStudy, OnlineCurve, OnlineMethod, StageRow, THREADS_ENV,
};
