use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentSpec, SyntheticSpec};
use crate::distill::DEFAULT_BETA;
use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::optim::ScheduleKind;
use crate::reinit::{make_stage_plan, ReinitSpec, StagePlan};

/// Weight decay applied when a setting turns W on and none was configured.
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
pub const DEFAULT_BATCH_SIZE: usize = 125;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

pub const LR_GRID: [f64; 5] = [0.005, 0.01, 0.03, 0.05, 0.1];
pub const WD_GRID: [f64; 5] = [0.0, 0.0001, 0.0005, 0.001, 0.005];
pub const STAGE_GRID: [usize; 6] = [1, 2, 5, 10, 20, 25];
pub const NOISE_GRID: [f64; 3] = [0.0, 0.2, 0.4];
pub const ONLINE_CHUNKS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Per-channel statistics of the training split.
    #[default]
    Dataset,
    /// Fixed ImageNet-style constants (3-channel images only).
    Imagenet,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub normalization: NormalizationMode,
}

fn default_val_fraction() -> f64 {
    DEFAULT_VAL_FRACTION
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillSpec {
    pub enabled: bool,
    pub beta: f64,
}

impl Default for DistillSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            beta: DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub noise: u64,
    pub shuffle: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        use crate::seeds::derive_seed;
        Self {
            init: derive_seed(seed, 101),
            data: derive_seed(seed, 102),
            noise: derive_seed(seed, 103),
            shuffle: derive_seed(seed, 104),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_base(0)
    }
}

/// Regularization settings: none, +augmentation, +cosine annealing,
/// +weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    None,
    D,
    Dc,
    Dcw,
}

impl Setting {
    pub fn label(&self) -> &'static str {
        match self {
            Setting::None => "∅",
            Setting::D => "D",
            Setting::Dc => "DC",
            Setting::Dcw => "DCW",
        }
    }

    pub fn flags(&self) -> (bool, bool, bool) {
        match self {
            Setting::None => (false, false, false),
            Setting::D => (true, false, false),
            Setting::Dc => (true, true, false),
            Setting::Dcw => (true, true, true),
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "∅" | "empty" => Ok(Setting::None),
            "d" => Ok(Setting::D),
            "dc" => Ok(Setting::Dc),
            "dcw" => Ok(Setting::Dcw),
            other => Err(Error::Config(format!("unknown setting `{other}`"))),
        }
    }
}

/// Everything needed to reproduce one staged training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub run_id: Option<String>,
    pub network: NetworkSpec,
    pub data: DataConfig,
    /// Flag D.
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub augment_spec: AugmentSpec,
    /// Flag C: `cosine_per_stage` vs `constant`.
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub eta_min: f64,
    /// Flag W is on when this is positive.
    #[serde(default)]
    pub weight_decay: f64,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub epochs: usize,
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub reinit: ReinitSpec,
    #[serde(default)]
    pub distill: DistillSpec,
    #[serde(default)]
    pub noise_q: f64,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_true")]
    pub reset_optimizer_on_stage: bool,
    /// Include `wall_ms` in metrics.jsonl (makes the file non-reproducible).
    #[serde(default)]
    pub log_wall_time: bool,
    #[serde(default = "default_true")]
    pub save_teacher_cache: bool,
}

fn default_schedule() -> ScheduleKind {
    ScheduleKind::Constant
}
fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}
fn default_stages() -> usize {
    1
}
fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    /// Desk-scale defaults: MLP(256, 128) on a synthetic Gaussian mixture,
    /// batch 125, N = 60, standard training.
    pub fn desk_default() -> Self {
        Self {
            run_id: None,
            network: NetworkSpec::new(64, vec![256, 128], 10).with_blocks(vec![1, 2]),
            data: DataConfig {
                source: DataSource::Synthetic(SyntheticSpec {
                    num_classes: 10,
                    dim: 64,
                    per_class: 400,
                    separation: 5.0,
                    seed: 1,
                    test_per_class: 200,
                    image: None,
                    clusters_per_class: 4,
                }),
                val_fraction: DEFAULT_VAL_FRACTION,
                normalization: NormalizationMode::Dataset,
            },
            augment: false,
            augment_spec: AugmentSpec::default(),
            schedule: ScheduleKind::Constant,
            eta_min: 0.0,
            weight_decay: 0.0,
            lr: 0.03,
            momentum: DEFAULT_MOMENTUM,
            epochs: 60,
            stages: 1,
            batch_size: DEFAULT_BATCH_SIZE,
            reinit: ReinitSpec::None,
            distill: DistillSpec::default(),
            noise_q: 0.0,
            seeds: Seeds::default(),
            reset_optimizer_on_stage: true,
            log_wall_time: false,
            save_teacher_cache: true,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Sets the D/C/W flags. Turning W off forces `weight_decay = 0`; turning
    /// it on keeps a configured positive value or uses the default.
    pub fn apply_setting(&mut self, setting: Setting) {
        let (d, c, w) = setting.flags();
        self.augment = d;
        self.schedule = if c {
            ScheduleKind::CosinePerStage
        } else {
            ScheduleKind::Constant
        };
        if !w {
            self.weight_decay = 0.0;
        } else if self.weight_decay <= 0.0 {
            self.weight_decay = DEFAULT_WEIGHT_DECAY;
        }
    }

    /// The setting these flags correspond to, if any.
    pub fn setting(&self) -> Option<Setting> {
        let c = self.schedule == ScheduleKind::CosinePerStage;
        match (self.augment, c, self.weight_decay > 0.0) {
            (false, false, false) => Some(Setting::None),
            (true, false, false) => Some(Setting::D),
            (true, true, false) => Some(Setting::Dc),
            (true, true, true) => Some(Setting::Dcw),
            _ => None,
        }
    }

    pub fn setting_label(&self) -> String {
        self.setting().map_or_else(
            || {
                let mut s = String::new();
                if self.augment {
                    s.push('D');
                }
                if self.schedule == ScheduleKind::CosinePerStage {
                    s.push('C');
                }
                if self.weight_decay > 0.0 {
                    s.push('W');
                }
                s
            },
            |s| s.label().to_string(),
        )
    }

    pub fn stage_plan(&self) -> Result<StagePlan> {
        make_stage_plan(self.epochs, self.stages)
    }

    pub fn resolved_run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            let distill = if self.distill.enabled { "-distill" } else { "" };
            format!(
                "{}{distill}-T{}-lr{}-wd{}-q{}-s{}",
                self.reinit.label(),
                self.stages,
                self.lr,
                self.weight_decay,
                self.noise_q,
                self.seeds.init
            )
        })
    }

    /// Rejects inconsistent configurations before any training happens.
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let plan = self.stage_plan()?;
        self.reinit.validate(plan.num_stages, self.network.num_blocks())?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..=self.lr).contains(&self.eta_min) {
            return Err(Error::Config("eta_min must lie in [0, lr]".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_q) {
            return Err(Error::Config(format!(
                "noise_q must be in [0, 1], got {}",
                self.noise_q
            )));
        }
        if self.distill.enabled && !(self.distill.beta >= 0.0) {
            return Err(Error::Config("distillation beta must be >= 0".into()));
        }
        if self.augment {
            let is_image = match &self.data.source {
                DataSource::Synthetic(s) => s.image.is_some(),
                DataSource::Idx { .. } => true,
                DataSource::Csv { .. } => false,
            };
            if !is_image {
                return Err(Error::Config("augmentation (flag D) requires image data".into()));
            }
        }
        Ok(())
    }
}
