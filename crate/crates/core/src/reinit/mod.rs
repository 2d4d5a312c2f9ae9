//! Re-initialization rules applied between training stages, and the
//! equal-compute stage plan.

mod layerwise;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FrozenNormLayer, InitDistribution, Network, ParamVector, Real};
use crate::seeds::derive_seed;

pub use layerwise::{block_mask, kept_blocks, layerwise_reinit, RescaleMode};

/// Default shrink factor.
pub const DEFAULT_LAMBDA: f64 = 0.4;
/// Default perturbation scale.
pub const DEFAULT_GAMMA: f64 = 0.1;

/// `num_stages` stages of `total_epochs / num_stages` (floored) epochs each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub total_epochs: usize,
    pub num_stages: usize,
    pub epochs_per_stage: usize,
}

impl StagePlan {
    pub fn trained_epochs(&self) -> usize {
        self.num_stages * self.epochs_per_stage
    }

    pub fn total_steps(&self, steps_per_epoch: usize) -> u64 {
        (self.trained_epochs() * steps_per_epoch) as u64
    }
}

pub fn make_stage_plan(total_epochs: usize, num_stages: usize) -> Result<StagePlan> {
    if num_stages == 0 || num_stages > total_epochs {
        return Err(Error::Config(format!(
            "need 1 <= stages <= epochs, got {num_stages} stages for {total_epochs} epochs"
        )));
    }
    Ok(StagePlan {
        total_epochs,
        num_stages,
        epochs_per_stage: total_epochs / num_stages,
    })
}

/// Which rule produces the next stage's starting parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum ReinitSpec {
    #[default]
    None,
    ShrinkPerturb {
        lambda: f64,
        gamma: f64,
    },
    LayerWise {
        blocks: usize,
        repeats: usize,
        #[serde(default)]
        rescale: RescaleMode,
    },
    Full,
}

impl ReinitSpec {
    pub fn shrink_perturb() -> Self {
        ReinitSpec::ShrinkPerturb {
            lambda: DEFAULT_LAMBDA,
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ReinitSpec::None => "none",
            ReinitSpec::ShrinkPerturb { .. } => "sp",
            ReinitSpec::LayerWise { .. } => "layerwise",
            ReinitSpec::Full => "full",
        }
    }

    /// Checks hyperparameter ranges and, for layer-wise, `T == K * M`.
    pub fn validate(&self, num_stages: usize, network_blocks: usize) -> Result<()> {
        match *self {
            ReinitSpec::ShrinkPerturb { lambda, gamma } => {
                for (name, v) in [("lambda", lambda), ("gamma", gamma)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
                    }
                }
            }
            ReinitSpec::LayerWise { blocks, repeats, .. } => {
                if blocks != network_blocks {
                    return Err(Error::Config(format!(
                        "layer-wise K={blocks} but the network declares {network_blocks} blocks"
                    )));
                }
                if repeats == 0 || blocks * repeats != num_stages {
                    return Err(Error::Config(format!(
                        "layer-wise needs T = K*M, got T={num_stages}, K={blocks}, M={repeats}"
                    )));
                }
            }
            ReinitSpec::None | ReinitSpec::Full => {}
        }
        Ok(())
    }
}

/// `lambda * theta + gamma * theta_init`, elementwise.
pub fn shrink_perturb<R: Real>(
    theta: &ParamVector<R>,
    theta_init: &ParamVector<R>,
    lambda: f64,
    gamma: f64,
) -> Result<ParamVector<R>> {
    theta.ensure_same_layout(theta_init)?;
    let (l, g) = (R::from_f64_lossy(lambda), R::from_f64_lossy(gamma));
    let mut out = theta.clone();
    for (o, &i) in out.values_mut().iter_mut().zip(theta_init.values()) {
        *o = l * *o + g * i;
    }
    Ok(out)
}

/// Everything besides `theta_end` that a re-initialization may need.
pub struct ReinitContext<'a, R> {
    pub network: &'a Network,
    /// Base distribution; stage `t` draws from `dist.for_stage(t)`.
    pub dist: InitDistribution,
    /// Per-block norms of the stage-1 starting parameters.
    pub init_block_norms: &'a [f64],
    /// Training batch used for normalization statistics.
    pub stats_batch: ArrayView2<'a, R>,
}

#[derive(Debug, Clone)]
pub struct ReinitOutcome<R> {
    pub params: ParamVector<R>,
    /// Normalization layer to install; `None` keeps the current one.
    pub norm: Option<FrozenNormLayer>,
    /// The fresh draw consumed, if any.
    pub fresh: Option<ParamVector<R>>,
}

impl InitDistribution {
    /// Distribution whose seed is derived from this one and stage `t`.
    pub fn for_stage(&self, t: usize) -> InitDistribution {
        InitDistribution::new(derive_seed(self.seed, t as u64))
    }
}

/// Starting parameters for stage `t + 1` given the end of stage `t`.
pub fn apply_reinit<R: Real>(
    spec: &ReinitSpec,
    theta_end: &ParamVector<R>,
    t: usize,
    ctx: &ReinitContext<'_, R>,
) -> Result<ReinitOutcome<R>> {
    if t == 0 {
        return Err(Error::Config("stage index starts at 1".into()));
    }
    let fresh = || ctx.dist.for_stage(t).sample::<R>(theta_end.layout());
    let outcome = match *spec {
        ReinitSpec::None => ReinitOutcome {
            params: theta_end.clone(),
            norm: None,
            fresh: None,
        },
        ReinitSpec::ShrinkPerturb { lambda, gamma } => {
            let init = fresh();
            ReinitOutcome {
                params: shrink_perturb(theta_end, &init, lambda, gamma)?,
                norm: None,
                fresh: Some(init),
            }
        }
        ReinitSpec::Full => {
            let init = fresh();
            ReinitOutcome {
                params: init.clone(),
                norm: None,
                fresh: Some(init),
            }
        }
        ReinitSpec::LayerWise { repeats, rescale, .. } => {
            let init = fresh();
            let (params, norm) = layerwise_reinit(
                ctx.network,
                theta_end,
                &init,
                t,
                repeats,
                ctx.init_block_norms,
                ctx.stats_batch,
                rescale,
            )?;
            ReinitOutcome {
                params,
                norm: Some(norm),
                fresh: Some(init),
            }
        }
    };
    if !outcome.params.is_finite() {
        return Err(Error::Numerical {
            step: 0,
            message: format!("re-initialization after stage {t} produced non-finite parameters"),
        });
    }
    Ok(outcome)
}
