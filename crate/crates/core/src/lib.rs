//! Staged training of small ReLU networks with pluggable re-initialization
//! (shrink & perturb, layer-wise, full re-init) and optional per-stage
//! self-distillation, plus the experiment harness that drives it.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod nn;
pub mod optim;
pub mod reinit;
pub mod seeds;

pub use error::{Error, Result};
pub use nn::{FrozenNormLayer, InitDistribution, LayerLayout, Network, NetworkSpec, ParamVector};
pub use optim::{lr_at, sgd_step, LrSchedule, OptimState, ScheduleKind};
pub use reinit::{apply_reinit, make_stage_plan, shrink_perturb, ReinitSpec, StagePlan};
