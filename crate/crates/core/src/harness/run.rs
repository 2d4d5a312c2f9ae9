//! The staged training loop: train, re-initialize, distill, repeat.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use super::config::{DataSource, NormalizationMode, RunConfig};
use super::metrics::{write_metrics_jsonl, write_summary_csv, MetricsRecord, RunSummary};
use crate::data::{
    augment, inject_label_noise, load_csv, load_idx_limit, make_synthetic_with_test, split_indices, Dataset,
    Normalization,
};
use crate::distill::{distill_rows, snapshot_teacher, TeacherCache};
use crate::error::{Error, Result};
use crate::nn::{
    save_checkpoint, Checkpoint, CheckpointHeader, FrozenNormLayer, InitDistribution, Network, ParamVector,
};
use crate::optim::{lr_at, sgd_step, LrSchedule, OptimState, ScheduleKind};
use crate::reinit::{apply_reinit, ReinitContext, StagePlan};
use crate::seeds::{derive_seed, rng_from};

/// Train/val/test data after splitting, noise injection and normalization.
#[derive(Debug, Clone)]
pub struct PreparedData {
    /// Training split with (possibly corrupted) labels.
    pub train: Dataset,
    pub clean_train_labels: Vec<usize>,
    pub noise_mask: Vec<bool>,
    pub val: Dataset,
    pub test: Dataset,
}

impl PreparedData {
    /// Training examples whose label was actually changed by the noise.
    pub fn flipped_indices(&self) -> Vec<usize> {
        (0..self.train.len())
            .filter(|&i| self.noise_mask[i] && self.train.labels[i] != self.clean_train_labels[i])
            .collect()
    }
}

fn load_source(source: &DataSource) -> Result<(Dataset, Dataset)> {
    match source {
        DataSource::Synthetic(spec) => make_synthetic_with_test(spec),
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            limit,
            test_limit,
        } => Ok((
            load_idx_limit(train_images, train_labels, *limit)?,
            load_idx_limit(test_images, test_labels, *test_limit)?,
        )),
        DataSource::Csv { train, test } => Ok((load_csv(train)?, load_csv(test)?)),
    }
}

/// Loads the configured data, splits off validation, corrupts training labels
/// and normalizes every split with training statistics.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    let (full, mut test) = load_source(&cfg.data.source)?;
    if full.dim() != cfg.network.input_dim || test.dim() != cfg.network.input_dim {
        return Err(Error::Config(format!(
            "data has {} features, network expects {}",
            full.dim(),
            cfg.network.input_dim
        )));
    }
    let classes = full.num_classes.max(test.num_classes);
    if classes > cfg.network.num_classes {
        return Err(Error::Config(format!(
            "data has {classes} classes, network outputs {}",
            cfg.network.num_classes
        )));
    }
    let (train_idx, val_idx) = split_indices(&full.labels, cfg.data.val_fraction, cfg.seeds.data)?;
    let mut clean = full.subset(&train_idx);
    let mut val = full.subset(&val_idx);
    for ds in [&mut clean, &mut val, &mut test] {
        ds.num_classes = cfg.network.num_classes;
    }
    let noisy = inject_label_noise(&clean, cfg.noise_q, cfg.seeds.noise)?;
    let norm = match cfg.data.normalization {
        NormalizationMode::Dataset => Some(clean.fit_normalization()),
        NormalizationMode::Imagenet => Some(Normalization::imagenet()),
        NormalizationMode::None => None,
    };
    let mut train = noisy.training_view();
    if let Some(n) = &norm {
        train.normalize(n)?;
        val.normalize(n)?;
        test.normalize(n)?;
    }
    Ok(PreparedData {
        train,
        clean_train_labels: noisy.base.labels,
        noise_mask: noisy.noise_mask,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    Failed { last_good_epoch: usize, message: String },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }

    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Failed { .. } => "failed",
        }
    }
}

/// The epoch with the highest validation accuracy (earliest on ties).
#[derive(Debug, Clone)]
pub struct BestCheckpoint {
    pub stage: usize,
    pub epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
    pub params: ParamVector<f32>,
    pub norm: Option<FrozenNormLayer>,
}

/// Parameter norms around one re-initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRecord {
    pub after_stage: usize,
    pub pre_norm: f64,
    pub post_norm: f64,
    pub fresh_norm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub config: RunConfig,
    pub status: RunStatus,
    pub plan: StagePlan,
    pub steps_per_epoch: Vec<usize>,
    pub final_params: ParamVector<f32>,
    pub final_norm: Option<FrozenNormLayer>,
    pub metrics: Vec<MetricsRecord>,
    pub best: Option<BestCheckpoint>,
    pub total_steps: u64,
    pub boundaries: Vec<BoundaryRecord>,
    /// Teacher row lookups per stage (index 0 is stage 1).
    pub teacher_reads: Vec<u64>,
    /// Examples forward-passed to build teacher caches.
    pub teacher_forward_examples: u64,
    /// Examples processed by training steps.
    pub train_examples: u64,
    pub augment_calls: u64,
    pub stage_end_test_acc: Vec<f64>,
    /// Learning rate used at every optimizer step.
    pub lr_trace: Vec<f64>,
    /// Among training examples whose label was flipped, the fraction the best
    /// checkpoint predicts with the corrupted label.
    pub noisy_memorization: Option<f64>,
    pub run_dir: Option<PathBuf>,
}

impl RunOutcome {
    pub fn summary(&self) -> RunSummary {
        let best = self.best.as_ref();
        RunSummary {
            run_id: self.run_id.clone(),
            status: self.status.label().to_string(),
            setting: self.config.setting_label(),
            reinit: self.config.reinit.label().to_string(),
            distill_beta: if self.config.distill.enabled {
                self.config.distill.beta
            } else {
                0.0
            },
            stages: self.plan.num_stages,
            epochs_per_stage: self.plan.epochs_per_stage,
            lr: self.config.lr,
            weight_decay: self.config.weight_decay,
            noise_q: self.config.noise_q,
            total_steps: self.total_steps,
            best_stage: best.map_or(0, |b| b.stage),
            best_epoch: best.map_or(0, |b| b.epoch),
            best_val_acc: best.map_or(0.0, |b| b.val_acc),
            best_test_acc: best.map_or(0.0, |b| b.test_acc),
            final_test_acc: self.metrics.last().map_or(0.0, |m| m.test_acc),
            final_weight_norm: self.final_params.norm(),
            noisy_memorization: self.noisy_memorization,
        }
    }

    /// Accuracy of the best checkpoint on the test split.
    pub fn best_test_acc(&self) -> f64 {
        self.best.as_ref().map_or(0.0, |b| b.test_acc)
    }

    pub fn best_val_acc(&self) -> f64 {
        self.best.as_ref().map_or(0.0, |b| b.val_acc)
    }

    /// Writes config, metrics, summary and best checkpoint into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join("config.json");
        fs::write(&cfg_path, serde_json::to_string_pretty(&self.config)?).map_err(|e| Error::io(&cfg_path, e))?;
        write_metrics_jsonl(&dir.join("metrics.jsonl"), &self.metrics)?;
        write_summary_csv(&dir.join("summary.csv"), &self.summary())?;
        if let Some(best) = &self.best {
            let ckpt = Checkpoint {
                header: CheckpointHeader {
                    spec: self.config.network.clone(),
                    layout: (**best.params.layout()).clone(),
                    seed: self.config.seeds.init,
                    stage: best.stage,
                    epoch: best.epoch,
                    norm: best.norm.clone(),
                },
                params: best.params.clone(),
            };
            save_checkpoint(dir.join("best.ckpt"), &ckpt)?;
        }
        Ok(())
    }
}

/// Fraction of rows of `inputs` that `params` classifies as `labels`.
pub fn accuracy(network: &Network, params: &ParamVector<f32>, inputs: &Array2<f32>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let pred = network.predict(params, inputs.view())?;
    Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64)
}

/// Runs one configured experiment, writing its run directory under `out`
/// when given.
pub fn run_experiment(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    run_prepared(cfg, &data, out)
}

/// Like [`run_experiment`] with data already prepared (shared read-only
/// across grid cells).
pub fn run_prepared(cfg: &RunConfig, data: &PreparedData, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let plan = cfg.stage_plan()?;
    let all: Vec<usize> = (0..data.train.len()).collect();
    run_stages(cfg, data, plan, &|_| all.clone(), out)
}

struct Trainer<'a> {
    cfg: &'a RunConfig,
    data: &'a PreparedData,
    network: Network,
    run_id: String,
    started: Instant,
}

/// The stage loop. `stage_indices(t)` gives the training examples used in
/// stage `t` (all of them for ordinary runs, a growing prefix of chunks for
/// the online simulation).
pub(crate) fn run_stages(
    cfg: &RunConfig,
    data: &PreparedData,
    plan: StagePlan,
    stage_indices: &dyn Fn(usize) -> Vec<usize>,
    out: Option<&Path>,
) -> Result<RunOutcome> {
    let run_id = cfg.resolved_run_id();
    let run_dir = out.map(|o| o.join(&run_id));
    if let Some(d) = &run_dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut tr = Trainer {
        cfg,
        data,
        network: Network::new(cfg.network.clone())?,
        run_id,
        started: Instant::now(),
    };
    let outcome = tr.run(plan, stage_indices, run_dir.as_deref())?;
    if let Some(d) = &run_dir {
        outcome.write_files(d)?;
    }
    Ok(outcome)
}

impl Trainer<'_> {
    fn run(
        &mut self,
        plan: StagePlan,
        stage_indices: &dyn Fn(usize) -> Vec<usize>,
        run_dir: Option<&Path>,
    ) -> Result<RunOutcome> {
        let cfg = self.cfg;
        let data = self.data;
        let dist = InitDistribution::new(cfg.seeds.init);
        let mut params: ParamVector<f32> = dist.sample(self.network.layout());
        let init_block_norms = params.block_norms();
        let mut opt = OptimState::<f32>::new(params.len(), cfg.momentum, cfg.weight_decay)?;
        let mut shuffle_rng = rng_from(cfg.seeds.shuffle);
        let mut aug_rng = rng_from(derive_seed(cfg.seeds.shuffle, 1));
        let mut stats_rng = rng_from(derive_seed(cfg.seeds.shuffle, 2));
        let beta = cfg.distill.beta as f32;

        let mut metrics = Vec::new();
        let mut best: Option<BestCheckpoint> = None;
        let mut boundaries = Vec::new();
        let mut teacher_reads = vec![0u64; plan.num_stages];
        let mut teacher: Option<TeacherCache> = None;
        let mut teacher_forward_examples = 0u64;
        let mut train_examples = 0u64;
        let mut augment_calls = 0u64;
        let mut stage_end_test_acc = Vec::new();
        let mut steps_per_epoch_log = Vec::new();
        let mut lr_trace = Vec::new();
        let mut status = RunStatus::Completed;
        let mut epoch = 0usize;

        'stages: for stage in 1..=plan.num_stages {
            let indices = stage_indices(stage);
            if indices.is_empty() {
                return Err(Error::Config(format!("stage {stage} has no training data")));
            }
            if stage > 1 {
                if cfg.distill.enabled {
                    let cache = snapshot_teacher(
                        &self.network,
                        &params,
                        data.train.inputs.view(),
                        stage - 1,
                        cfg.distill.beta,
                    )?;
                    teacher_forward_examples += data.train.len() as u64;
                    if let (Some(d), true) = (run_dir, cfg.save_teacher_cache) {
                        cache.save(d)?;
                    }
                    teacher = Some(cache);
                }
                let mut stats_pick = indices.clone();
                stats_pick.shuffle(&mut stats_rng);
                stats_pick.truncate(cfg.batch_size);
                let stats_batch = data.train.inputs.select(Axis(0), &stats_pick);
                let ctx = ReinitContext {
                    network: &self.network,
                    dist,
                    init_block_norms: &init_block_norms,
                    stats_batch: stats_batch.view(),
                };
                let pre_norm = params.norm();
                let outcome = apply_reinit(&cfg.reinit, &params, stage - 1, &ctx)?;
                params = outcome.params;
                if outcome.norm.is_some() {
                    self.network.set_norm_layer(outcome.norm)?;
                }
                boundaries.push(BoundaryRecord {
                    after_stage: stage - 1,
                    pre_norm,
                    post_norm: params.norm(),
                    fresh_norm: outcome.fresh.as_ref().map(|f| f.norm()),
                });
                if cfg.reset_optimizer_on_stage {
                    opt.reset();
                }
            }

            let steps_per_epoch = indices.len().div_ceil(cfg.batch_size);
            steps_per_epoch_log.push(steps_per_epoch);
            let steps_per_stage = (steps_per_epoch * plan.epochs_per_stage) as u64;
            let schedule = match cfg.schedule {
                ScheduleKind::Constant => LrSchedule::constant(cfg.lr, steps_per_stage),
                ScheduleKind::CosinePerStage => LrSchedule::cosine(cfg.lr, cfg.eta_min, steps_per_stage),
            };
            schedule.validate()?;
            let mut step_in_stage = 0u64;

            for epoch_in_stage in 1..=plan.epochs_per_stage {
                let mut order = indices.clone();
                order.shuffle(&mut shuffle_rng);
                let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
                let mut lr = cfg.lr;
                for batch in order.chunks(cfg.batch_size) {
                    let mut inputs = data.train.inputs.select(Axis(0), batch);
                    let labels: Vec<usize> = batch.iter().map(|&i| data.train.labels[i]).collect();
                    if cfg.augment {
                        augment(&mut inputs, data.train.image, &cfg.augment_spec, &mut aug_rng)?;
                        augment_calls += 1;
                    }
                    let rows = match (&teacher, stage > 1 && cfg.distill.enabled) {
                        (Some(cache), true) => {
                            teacher_reads[stage - 1] += 1;
                            Some(distill_rows(cache, batch, stage)?)
                        }
                        _ => None,
                    };
                    lr = lr_at(&schedule, step_in_stage)?;
                    lr_trace.push(lr);
                    let lg = self.network.loss_and_grad(
                        &params,
                        inputs.view(),
                        &labels,
                        rows.as_ref().map(|r| r.view()),
                        beta,
                    )?;
                    if !lg.loss.is_finite() {
                        status = RunStatus::Failed {
                            last_good_epoch: epoch,
                            message: format!("non-finite loss at step {}", opt.steps()),
                        };
                        break 'stages;
                    }
                    if let Err(e) = sgd_step(&mut params, &lg.grad, &mut opt, lr) {
                        match e {
                            Error::Numerical { .. } => {
                                status = RunStatus::Failed {
                                    last_good_epoch: epoch,
                                    message: e.to_string(),
                                };
                                break 'stages;
                            }
                            other => return Err(other),
                        }
                    }
                    if !params.is_finite() {
                        status = RunStatus::Failed {
                            last_good_epoch: epoch,
                            message: format!("parameters diverged at step {}", opt.steps()),
                        };
                        break 'stages;
                    }
                    step_in_stage += 1;
                    loss_sum += lg.loss as f64 * batch.len() as f64;
                    seen += batch.len();
                    train_examples += batch.len() as u64;
                    correct += argmax_rows(&lg.logits).zip(&labels).filter(|(p, y)| p == *y).count();
                }
                epoch += 1;
                let val_acc = accuracy(&self.network, &params, &data.val.inputs, &data.val.labels)?;
                let test_acc = accuracy(&self.network, &params, &data.test.inputs, &data.test.labels)?;
                metrics.push(MetricsRecord {
                    run_id: self.run_id.clone(),
                    stage,
                    epoch,
                    epoch_in_stage,
                    step: opt.steps(),
                    lr,
                    train_loss: loss_sum / seen as f64,
                    train_acc: correct as f64 / seen as f64,
                    val_acc,
                    test_acc,
                    weight_norm: params.norm(),
                    wall_ms: cfg.log_wall_time.then(|| self.started.elapsed().as_millis() as u64),
                });
                if best.as_ref().is_none_or(|b| val_acc > b.val_acc) {
                    best = Some(BestCheckpoint {
                        stage,
                        epoch,
                        val_acc,
                        test_acc,
                        params: params.clone(),
                        norm: self.network.norm_layer().cloned(),
                    });
                }
            }
            stage_end_test_acc.push(metrics.last().map_or(0.0, |m| m.test_acc));
        }

        let noisy_memorization = match &best {
            Some(b) if cfg.noise_q > 0.0 => self.memorization(b)?,
            _ => None,
        };
        Ok(RunOutcome {
            run_id: self.run_id.clone(),
            config: cfg.clone(),
            status,
            plan,
            steps_per_epoch: steps_per_epoch_log,
            final_params: params,
            final_norm: self.network.norm_layer().cloned(),
            metrics,
            best,
            total_steps: opt.steps(),
            boundaries,
            teacher_reads,
            teacher_forward_examples,
            train_examples,
            augment_calls,
            stage_end_test_acc,
            lr_trace,
            noisy_memorization,
            run_dir: None,
        }
        .with_dir(run_dir))
    }

    fn memorization(&self, best: &BestCheckpoint) -> Result<Option<f64>> {
        let flipped = self.data.flipped_indices();
        if flipped.is_empty() {
            return Ok(None);
        }
        let mut net = self.network.clone();
        net.set_norm_layer(best.norm.clone())?;
        let inputs = self.data.train.inputs.select(Axis(0), &flipped);
        let labels: Vec<usize> = flipped.iter().map(|&i| self.data.train.labels[i]).collect();
        Ok(Some(accuracy(&net, &best.params, &inputs, &labels)?))
    }
}

impl RunOutcome {
    fn with_dir(mut self, dir: Option<&Path>) -> Self {
        self.run_dir = dir.map(Path::to_path_buf);
        self
    }
}

fn argmax_rows(logits: &Array2<f32>) -> impl Iterator<Item = usize> + '_ {
    logits.axis_iter(Axis(0)).map(|row| {
        row.iter()
            .enumerate()
            .fold(
                (0, f32::NEG_INFINITY),
                |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
            )
            .0
    })
}
