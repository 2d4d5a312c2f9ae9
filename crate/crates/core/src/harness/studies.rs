//! Multi-run studies: LR x WD grids, stage-count sweeps, label-noise studies
//! and the online-learning simulation.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::{prepare_data, run_prepared, run_stages, PreparedData, RunOutcome};
use crate::data::make_chunks;
use crate::error::{Error, Result};
use crate::reinit::{make_stage_plan, ReinitSpec, StagePlan, DEFAULT_GAMMA, DEFAULT_LAMBDA};
use crate::seeds::derive_seed;

/// Environment variable capping the number of concurrently running cells.
pub const THREADS_ENV: &str = "REINIT_LAB_THREADS";

pub fn study_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_parallel<T, F>(jobs: Vec<T>, f: F) -> Result<Vec<Result<RunOutcome>>>
where
    T: Send,
    F: Fn(T) -> Result<RunOutcome> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(study_threads())
        .build()
        .map_err(|e| Error::Harness(format!("thread pool: {e}")))?;
    Ok(pool.install(|| jobs.into_par_iter().map(&f).collect()))
}

/// A training method compared in a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub reinit: ReinitSpec,
    pub distill: bool,
    /// `false` forces a single stage (standard training).
    pub staged: bool,
}

impl Method {
    pub fn standard() -> Self {
        Self {
            name: "standard".into(),
            reinit: ReinitSpec::None,
            distill: false,
            staged: false,
        }
    }

    /// Parses `standard`, `sgdr`, `sp`, `sp+distill`, `layerwise`,
    /// `layerwise+distill`, `full` or `ban`.
    pub fn parse(name: &str, network_blocks: usize) -> Result<Self> {
        let (base, distill) = match name.strip_suffix("+distill") {
            Some(b) => (b, true),
            None => (name, false),
        };
        let (reinit, staged, distill) = match base {
            "standard" => (ReinitSpec::None, false, distill),
            "sgdr" | "none" => (ReinitSpec::None, true, distill),
            "sp" => (ReinitSpec::shrink_perturb(), true, distill),
            "layerwise" => (
                ReinitSpec::LayerWise {
                    blocks: network_blocks,
                    repeats: 1,
                    rescale: Default::default(),
                },
                true,
                distill,
            ),
            "full" => (ReinitSpec::Full, true, distill),
            "ban" => (ReinitSpec::Full, true, true),
            other => return Err(Error::Config(format!("unknown method `{other}`"))),
        };
        Ok(Self {
            name: name.to_string(),
            reinit,
            distill,
            staged,
        })
    }

    /// `base` configured for this method.
    pub fn configure(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut cfg = base.clone();
        cfg.distill.enabled = self.distill;
        if !self.staged {
            cfg.stages = 1;
            cfg.reinit = ReinitSpec::None;
            return Ok(cfg);
        }
        cfg.reinit = match self.reinit {
            // keep a user-tuned lambda/gamma from the base config
            ReinitSpec::ShrinkPerturb { .. } => match base.reinit {
                sp @ ReinitSpec::ShrinkPerturb { .. } => sp,
                _ => self.reinit,
            },
            ReinitSpec::LayerWise { blocks, rescale, .. } => {
                if cfg.stages % blocks != 0 {
                    return Err(Error::Config(format!(
                        "layer-wise with K={blocks} needs a stage count divisible by K, got {}",
                        cfg.stages
                    )));
                }
                ReinitSpec::LayerWise {
                    blocks,
                    repeats: cfg.stages / blocks,
                    rescale,
                }
            }
            other => other,
        };
        Ok(cfg)
    }
}

fn with_run_id(cfg: &RunConfig, suffix: &str) -> RunConfig {
    let mut c = cfg.clone();
    let prefix = cfg.run_id.clone().unwrap_or_else(|| {
        let distill = if cfg.distill.enabled { "-distill" } else { "" };
        format!(
            "{}{distill}-T{}-q{}-s{}",
            cfg.reinit.label(),
            cfg.stages,
            cfg.noise_q,
            cfg.seeds.init
        )
    });
    c.run_id = Some(format!("{prefix}-{suffix}"));
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub wd: f64,
    pub run_id: String,
    pub status: String,
    pub best_val_acc: f64,
    /// Test accuracy at the best-validation epoch.
    pub test_acc: f64,
    pub total_steps: u64,
    pub noisy_memorization: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GridCell {
    pub fn completed(&self) -> bool {
        self.status == "completed"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index of the cell with the highest validation accuracy.
    pub chosen: usize,
}

impl GridResult {
    pub fn chosen_cell(&self) -> &GridCell {
        &self.cells[self.chosen]
    }

    /// Spread (max - min) of test accuracy over completed cells.
    pub fn robustness(&self) -> f64 {
        let accs: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.completed())
            .map(|c| c.test_acc)
            .collect();
        let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
        if accs.is_empty() {
            0.0
        } else {
            max - min
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("grid.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv_path = dir.join("grid.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Harness(e.to_string()))?;
        w.write_record([
            "lr",
            "wd",
            "status",
            "best_val_acc",
            "test_acc",
            "total_steps",
            "run_id",
        ])
        .map_err(|e| Error::Harness(e.to_string()))?;
        for c in &self.cells {
            w.write_record([
                c.lr.to_string(),
                c.wd.to_string(),
                c.status.clone(),
                c.best_val_acc.to_string(),
                c.test_acc.to_string(),
                c.total_steps.to_string(),
                c.run_id.clone(),
            ])
            .map_err(|e| Error::Harness(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }
}

/// Picks the completed cell with the best validation accuracy; ties go to the
/// smaller lr, then the smaller wd.
pub fn choose_cell(cells: &[GridCell]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate().filter(|(_, c)| c.completed()) {
        let better = match best {
            None => true,
            Some(b) => {
                let bc = &cells[b];
                c.best_val_acc > bc.best_val_acc || (c.best_val_acc == bc.best_val_acc && (c.lr, c.wd) < (bc.lr, bc.wd))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// One run per (lr, wd) cell with shared seeds and data.
pub fn grid_search(base: &RunConfig, lr_grid: &[f64], wd_grid: &[f64], out: Option<&Path>) -> Result<GridResult> {
    base.validate()?;
    let data = prepare_data(base)?;
    grid_search_prepared(base, &data, lr_grid, wd_grid, out)
}

pub fn grid_search_prepared(
    base: &RunConfig,
    data: &PreparedData,
    lr_grid: &[f64],
    wd_grid: &[f64],
    out: Option<&Path>,
) -> Result<GridResult> {
    if lr_grid.is_empty() || wd_grid.is_empty() {
        return Err(Error::Config(
            "learning-rate and weight-decay grids must be non-empty".into(),
        ));
    }
    let mut jobs = Vec::new();
    for &lr in &sorted(lr_grid) {
        for &wd in &sorted(wd_grid) {
            let mut cfg = with_run_id(base, &format!("lr{lr}-wd{wd}"));
            cfg.lr = lr;
            cfg.weight_decay = wd;
            jobs.push(cfg);
        }
    }
    let results = run_parallel(jobs.clone(), |cfg| run_prepared(&cfg, data, out))?;
    let cells: Vec<GridCell> = jobs
        .iter()
        .zip(results)
        .map(|(cfg, res)| match res {
            Ok(o) => GridCell {
                lr: cfg.lr,
                wd: cfg.weight_decay,
                run_id: o.run_id.clone(),
                status: o.status.label().to_string(),
                best_val_acc: o.best_val_acc(),
                test_acc: o.best_test_acc(),
                total_steps: o.total_steps,
                noisy_memorization: o.noisy_memorization,
                error: match &o.status {
                    super::run::RunStatus::Failed { message, .. } => Some(message.clone()),
                    _ => None,
                },
            },
            Err(e) => GridCell {
                lr: cfg.lr,
                wd: cfg.weight_decay,
                run_id: cfg.resolved_run_id(),
                status: "failed".into(),
                best_val_acc: 0.0,
                test_acc: 0.0,
                total_steps: 0,
                noisy_memorization: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let chosen = choose_cell(&cells).ok_or_else(|| Error::Harness("every grid cell failed".into()))?;
    let result = GridResult { cells, chosen };
    if let Some(o) = out {
        result.write(&o.join(format!("grid-{}", with_run_id(base, "grid").run_id.unwrap())))?;
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stages: usize,
    pub epochs_per_stage: usize,
    pub total_steps: u64,
    pub status: String,
    pub best_val_acc: f64,
    pub test_acc: f64,
    pub stage_end_test_acc: Vec<f64>,
}

/// Equal-compute runs of `base` for each stage count in `t_values`.
pub fn stage_sweep(base: &RunConfig, method: &Method, t_values: &[usize], out: Option<&Path>) -> Result<Vec<StageRow>> {
    base.network.validate()?;
    let data = prepare_data(base)?;
    let mut jobs = Vec::new();
    for &t in t_values {
        let plan = make_stage_plan(base.epochs, t)?;
        if plan.trained_epochs() != base.epochs {
            return Err(Error::Config(format!(
                "T={t} does not divide N={} (compute parity would break)",
                base.epochs
            )));
        }
        let mut cfg = base.clone();
        cfg.stages = t;
        let mut cfg = if t == 1 {
            Method::standard().configure(&cfg)?
        } else {
            method.configure(&cfg)?
        };
        cfg.distill.enabled = method.distill && t > 1;
        jobs.push(with_run_id(&cfg, &format!("{}-T{t}", method.name)));
    }
    let results = run_parallel(jobs.clone(), |cfg| run_prepared(&cfg, &data, out))?;
    let mut rows = Vec::new();
    for (cfg, res) in jobs.iter().zip(results) {
        let o = res?;
        rows.push(StageRow {
            stages: cfg.stages,
            epochs_per_stage: o.plan.epochs_per_stage,
            total_steps: o.total_steps,
            status: o.status.label().into(),
            best_val_acc: o.best_val_acc(),
            test_acc: o.best_test_acc(),
            stage_end_test_acc: o.stage_end_test_acc.clone(),
        });
    }
    assert_parity(
        rows.iter().filter(|r| r.status == "completed").map(|r| r.total_steps),
        "stage sweep",
    )?;
    if let Some(o) = out {
        let p = o.join(format!("stages-{}.json", method.name));
        fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        fs::write(&p, serde_json::to_string_pretty(&rows)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(rows)
}

fn assert_parity(steps: impl Iterator<Item = u64>, what: &str) -> Result<()> {
    let steps: Vec<u64> = steps.collect();
    if steps.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Harness(format!(
            "{what}: optimizer step counts differ: {steps:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub q: f64,
    pub method: String,
    pub lr: f64,
    pub wd: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub memorization: Option<f64>,
    pub total_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub q: f64,
    pub epochs: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub memorization: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseStudy {
    pub rows: Vec<NoiseRow>,
    pub budget_rows: Vec<BudgetRow>,
}

/// For each noise level and method, the grid-tuned result; plus an
/// epoch-budget sweep for standard training.
pub fn noise_study(
    base: &RunConfig,
    q_values: &[f64],
    methods: &[Method],
    lr_grid: &[f64],
    wd_grid: &[f64],
    epoch_budgets: &[usize],
    out: Option<&Path>,
) -> Result<NoiseStudy> {
    let mut rows = Vec::new();
    let mut budget_rows = Vec::new();
    for &q in q_values {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Config(format!("noise fraction {q} outside [0, 1]")));
        }
        let mut noisy = base.clone();
        noisy.noise_q = q;
        let data = prepare_data(&noisy)?;
        let mut q_rows = Vec::new();
        for m in methods {
            let cfg = m.configure(&noisy)?;
            let cfg = with_run_id(&cfg, &m.name.replace('+', "_"));
            let grid = grid_search_prepared(&cfg, &data, lr_grid, wd_grid, out)?;
            let c = grid.chosen_cell();
            q_rows.push(NoiseRow {
                q,
                method: m.name.clone(),
                lr: c.lr,
                wd: c.wd,
                val_acc: c.best_val_acc,
                test_acc: c.test_acc,
                memorization: c.noisy_memorization,
                total_steps: c.total_steps,
            });
        }
        assert_parity(q_rows.iter().map(|r| r.total_steps), &format!("noise study q={q}"))?;
        let (lr, wd) = q_rows
            .iter()
            .find(|r| r.method == "standard")
            .map_or((base.lr, base.weight_decay), |r| (r.lr, r.wd));
        let budget_jobs: Vec<RunConfig> = epoch_budgets
            .iter()
            .map(|&epochs| {
                let mut cfg = Method::standard().configure(&noisy).expect("standard never fails");
                cfg.epochs = epochs;
                cfg.lr = lr;
                cfg.weight_decay = wd;
                with_run_id(&cfg, &format!("budget{epochs}"))
            })
            .collect();
        let results = run_parallel(budget_jobs.clone(), |cfg| run_prepared(&cfg, &data, out))?;
        for (cfg, res) in budget_jobs.iter().zip(results) {
            let o = res?;
            budget_rows.push(BudgetRow {
                q,
                epochs: cfg.epochs,
                val_acc: o.best_val_acc(),
                test_acc: o.best_test_acc(),
                memorization: o.noisy_memorization,
            });
        }
        rows.extend(q_rows);
    }
    let study = NoiseStudy { rows, budget_rows };
    if let Some(o) = out {
        fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        let p = o.join("noise_study.json");
        fs::write(&p, serde_json::to_string_pretty(&study)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(study)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineMethod {
    Scratch,
    WarmStart,
    ShrinkPerturb,
}

impl OnlineMethod {
    pub const ALL: [OnlineMethod; 3] = [
        OnlineMethod::Scratch,
        OnlineMethod::WarmStart,
        OnlineMethod::ShrinkPerturb,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            OnlineMethod::Scratch => "scratch",
            OnlineMethod::WarmStart => "warm_start",
            OnlineMethod::ShrinkPerturb => "shrink_perturb",
        }
    }
}

impl std::str::FromStr for OnlineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scratch" => Ok(OnlineMethod::Scratch),
            "warm_start" | "warm" => Ok(OnlineMethod::WarmStart),
            "shrink_perturb" | "sp" => Ok(OnlineMethod::ShrinkPerturb),
            other => Err(Error::Config(format!("unknown online method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPoint {
    pub chunk: usize,
    pub train_size: usize,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineCurve {
    pub method: OnlineMethod,
    pub points: Vec<ChunkPoint>,
    pub total_steps: u64,
}

/// Training data arrives in `num_chunks` chunks; after each arrival the
/// model trains `epochs_per_chunk` epochs on everything seen so far.
pub fn online_sim(
    base: &RunConfig,
    num_chunks: usize,
    method: OnlineMethod,
    epochs_per_chunk: usize,
    out: Option<&Path>,
) -> Result<OnlineCurve> {
    if num_chunks < 2 {
        return Err(Error::Config("online simulation needs at least 2 chunks".into()));
    }
    if epochs_per_chunk == 0 {
        return Err(Error::Config("epochs_per_chunk must be >= 1".into()));
    }
    let mut cfg = base.clone();
    cfg.stages = num_chunks;
    cfg.epochs = num_chunks * epochs_per_chunk;
    cfg.distill.enabled = false;
    cfg.reinit = match method {
        OnlineMethod::Scratch => ReinitSpec::Full,
        OnlineMethod::WarmStart => ReinitSpec::None,
        OnlineMethod::ShrinkPerturb => match base.reinit {
            sp @ ReinitSpec::ShrinkPerturb { .. } => sp,
            _ => ReinitSpec::ShrinkPerturb {
                lambda: DEFAULT_LAMBDA,
                gamma: DEFAULT_GAMMA,
            },
        },
    };
    let cfg = with_run_id(&cfg, &format!("online-{}", method.label()));
    cfg.validate()?;
    let data = prepare_data(&cfg)?;
    let chunks = make_chunks(data.train.len(), num_chunks, derive_seed(cfg.seeds.data, 7))?;
    let plan = StagePlan {
        total_epochs: cfg.epochs,
        num_stages: num_chunks,
        epochs_per_stage: epochs_per_chunk,
    };
    let outcome = run_stages(&cfg, &data, plan, &|t| chunks.cumulative_union(t), out)?;
    if !outcome.status.is_completed() {
        return Err(Error::Harness(format!(
            "online run {} failed: {:?}",
            outcome.run_id, outcome.status
        )));
    }
    let points = outcome
        .stage_end_test_acc
        .iter()
        .enumerate()
        .map(|(i, &acc)| ChunkPoint {
            chunk: i + 1,
            train_size: chunks.cumulative_union(i + 1).len(),
            test_acc: acc,
        })
        .collect();
    Ok(OnlineCurve {
        method,
        points,
        total_steps: outcome.total_steps,
    })
}
