//! SGD with momentum and coupled weight decay, plus learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamVector, Real};

/// Momentum buffers and hyperparameters of one SGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<R = f32> {
    buffers: Vec<R>,
    momentum: R,
    weight_decay: R,
    steps: u64,
}

impl<R: Real> OptimState<R> {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
            return Err(Error::Config(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(Self {
            buffers: vec![R::zero(); len],
            momentum: R::from_f64_lossy(momentum),
            weight_decay: R::from_f64_lossy(weight_decay),
            steps: 0,
        })
    }

    pub fn buffers(&self) -> &[R] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [R] {
        &mut self.buffers
    }

    /// Number of successful steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Zeroes the momentum buffers; the step counter keeps running.
    pub fn reset(&mut self) {
        self.buffers.iter_mut().for_each(|b| *b = R::zero());
    }
}

/// One update: `g = grad + wd * p; buf = mu * buf + g; p -= lr * buf`.
///
/// Nothing is modified when the gradient contains a non-finite entry.
pub fn sgd_step<R: Real>(params: &mut ParamVector<R>, grads: &[R], state: &mut OptimState<R>, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.buffers.len() != params.len() {
        return Err(Error::Shape(format!(
            "params {}, grads {}, buffers {}",
            params.len(),
            grads.len(),
            state.buffers.len()
        )));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::Config(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical {
            step: state.steps,
            message: format!("gradient entry {i} is not finite"),
        });
    }
    let lr = R::from_f64_lossy(lr);
    let (mu, wd) = (state.momentum, state.weight_decay);
    for ((p, &g), b) in params.values_mut().iter_mut().zip(grads).zip(state.buffers.iter_mut()) {
        let g = g + wd * *p;
        *b = mu * *b + g;
        *p -= lr * *b;
    }
    state.steps += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    CosinePerStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub eta_max: f64,
    pub eta_min: f64,
    pub steps_per_stage: u64,
}

impl LrSchedule {
    pub fn constant(eta: f64, steps_per_stage: u64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            eta_max: eta,
            eta_min: eta,
            steps_per_stage,
        }
    }

    pub fn cosine(eta_max: f64, eta_min: f64, steps_per_stage: u64) -> Self {
        Self {
            kind: ScheduleKind::CosinePerStage,
            eta_max,
            eta_min,
            steps_per_stage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_max > 0.0) || !self.eta_max.is_finite() {
            return Err(Error::Config(format!("eta_max must be > 0, got {}", self.eta_max)));
        }
        if !(self.eta_min >= 0.0) || self.eta_min > self.eta_max {
            return Err(Error::Config(format!(
                "eta_min must lie in [0, eta_max], got {}",
                self.eta_min
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step_in_stage` (0..=steps_per_stage). Cosine restarts
/// from `eta_max` at the first step of every stage.
pub fn lr_at(schedule: &LrSchedule, step_in_stage: u64) -> Result<f64> {
    if step_in_stage > schedule.steps_per_stage {
        return Err(Error::Config(format!(
            "step {step_in_stage} outside stage of {} steps",
            schedule.steps_per_stage
        )));
    }
    Ok(match schedule.kind {
        ScheduleKind::Constant => schedule.eta_max,
        ScheduleKind::CosinePerStage => {
            if schedule.steps_per_stage == 0 {
                return Ok(schedule.eta_max);
            }
            let frac = step_in_stage as f64 / schedule.steps_per_stage as f64;
            schedule.eta_min + 0.5 * (schedule.eta_max - schedule.eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    })
}
