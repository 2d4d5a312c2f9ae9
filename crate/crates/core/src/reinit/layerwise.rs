use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FrozenNormLayer, LayerLayout, Network, ParamVector, Real, NORM_VAR_EPS};

/// How kept blocks are rescaled back to their initialization norm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// Each kept block gets its own factor.
    #[default]
    PerBlock,
    /// One factor for the whole kept prefix.
    Aggregate,
}

/// Number of leading blocks kept at the end of stage `t` with `repeats`
/// stages per block: `ceil(t / repeats)`.
pub fn kept_blocks(t: usize, repeats: usize) -> usize {
    t.div_ceil(repeats)
}

/// `m_i = 1` iff parameter `i` lies in the first `ceil(t / M)` blocks.
pub fn block_mask(layout: &LayerLayout, t: usize, repeats: usize) -> Result<Vec<bool>> {
    let limit = layout.num_blocks() * repeats;
    if repeats == 0 || t == 0 || t > limit {
        return Err(Error::Config(format!(
            "stage {t} outside 1..={limit} (K={}, M={repeats})",
            layout.num_blocks()
        )));
    }
    let kept = layout.prefix_range(kept_blocks(t, repeats)).end;
    Ok((0..layout.total_len()).map(|i| i < kept).collect())
}

/// Keeps the first `ceil(t/M)` blocks of `theta` (rescaled to their
/// initialization norms), takes the rest from `theta_init`, and computes the
/// frozen normalization layer that follows the last kept block.
#[allow(clippy::too_many_arguments)]
pub fn layerwise_reinit<R: Real>(
    network: &Network,
    theta: &ParamVector<R>,
    theta_init: &ParamVector<R>,
    t: usize,
    repeats: usize,
    init_block_norms: &[f64],
    stats_batch: ArrayView2<'_, R>,
    rescale: RescaleMode,
) -> Result<(ParamVector<R>, FrozenNormLayer)> {
    theta.ensure_same_layout(theta_init)?;
    let layout = theta.layout().clone();
    let mask = block_mask(&layout, t, repeats)?;
    if init_block_norms.len() != layout.num_blocks() {
        return Err(Error::Shape(format!(
            "{} init block norms for {} blocks",
            init_block_norms.len(),
            layout.num_blocks()
        )));
    }
    if stats_batch.nrows() == 0 {
        return Err(Error::Config("normalization statistics need a non-empty batch".into()));
    }

    let mut out = theta.clone();
    for ((o, &keep), &fresh) in out.values_mut().iter_mut().zip(&mask).zip(theta_init.values()) {
        if !keep {
            *o = fresh;
        }
    }

    let kept = kept_blocks(t, repeats);
    match rescale {
        RescaleMode::PerBlock => {
            for block in 1..=kept {
                let current = out.block_norm(block);
                if current == 0.0 {
                    return Err(Error::Numerical {
                        step: 0,
                        message: format!("block {block} has zero norm; cannot rescale"),
                    });
                }
                let factor = R::from_f64_lossy(init_block_norms[block - 1] / current);
                out.values_mut()[layout.block_range(block)]
                    .iter_mut()
                    .for_each(|v| *v *= factor);
            }
        }
        RescaleMode::Aggregate => {
            let range = layout.prefix_range(kept);
            let current = crate::nn::l2_norm(&out.values()[range.clone()]);
            if current == 0.0 {
                return Err(Error::Numerical {
                    step: 0,
                    message: "kept prefix has zero norm; cannot rescale".into(),
                });
            }
            let target = init_block_norms[..kept].iter().map(|n| n * n).sum::<f64>().sqrt();
            let factor = R::from_f64_lossy(target / current);
            out.values_mut()[range].iter_mut().for_each(|v| *v *= factor);
        }
    }

    let after_layer = layout
        .last_layer_of_block(kept)
        .ok_or_else(|| Error::Logic(format!("block {kept} has no layers")))?;
    let mut bare = network.clone();
    bare.set_norm_layer(None)?;
    let acts = bare.forward_prefix(&out, stats_batch, after_layer, false)?;
    let n = acts.nrows() as f64;
    let mut mean = vec![0.0f64; acts.ncols()];
    for row in acts.axis_iter(Axis(0)) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x.to_f64().unwrap_or(f64::NAN);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; acts.ncols()];
    for row in acts.axis_iter(Axis(0)) {
        for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(row) {
            let d = x.to_f64().unwrap_or(f64::NAN) - m;
            *v += d * d;
        }
    }
    // Variance epsilon rather than a bare std floor: a unit that is dead on
    // the batch but not elsewhere would otherwise be scaled by 1e5 once it
    // fires, which blows up training within an epoch.
    let std = var.iter().map(|v| (v / n + NORM_VAR_EPS).sqrt()).collect();

    Ok((
        out,
        FrozenNormLayer {
            after_block: kept,
            after_layer,
            mean,
            std,
        },
    ))
}
