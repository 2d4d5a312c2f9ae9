//! Random horizontal flips and size-preserving crops after zero padding.

use ndarray::{Array2, ArrayViewMut1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageShape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub horizontal_flip_prob: f64,
    pub pad_pixels: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            horizontal_flip_prob: 0.5,
            pad_pixels: 4,
        }
    }
}

/// Mirrors every row of every channel in place.
pub fn flip_horizontal(mut image: ArrayViewMut1<'_, f32>, shape: ImageShape) {
    let w = shape.width;
    for row in 0..shape.channels * shape.height {
        for c in 0..w / 2 {
            image.swap(row * w + c, row * w + w - 1 - c);
        }
    }
}

/// Pads by `pad` zeros on each side, then crops the original size starting
/// at `(dy, dx)` in padded coordinates. `(pad, pad)` is the identity.
pub fn pad_crop(mut image: ArrayViewMut1<'_, f32>, shape: ImageShape, pad: usize, dy: usize, dx: usize) {
    let (h, w) = (shape.height as i64, shape.width as i64);
    let src = image.to_vec();
    let (oy, ox) = (dy as i64 - pad as i64, dx as i64 - pad as i64);
    for c in 0..shape.channels {
        let base = c * shape.height * shape.width;
        for r in 0..h {
            for col in 0..w {
                let (sr, sc) = (r + oy, col + ox);
                image[base + (r * w + col) as usize] = if sr >= 0 && sr < h && sc >= 0 && sc < w {
                    src[base + (sr * w + sc) as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Augments each row of `batch` independently.
pub fn augment<G: Rng + ?Sized>(
    batch: &mut Array2<f32>,
    image: Option<ImageShape>,
    spec: &AugmentSpec,
    rng: &mut G,
) -> Result<()> {
    let shape = image.ok_or_else(|| Error::Config("augmentation requires image data".into()))?;
    if shape.len() != batch.ncols() {
        return Err(Error::Shape(format!(
            "image shape {shape:?} vs {} columns",
            batch.ncols()
        )));
    }
    let pad = spec.pad_pixels;
    for mut row in batch.rows_mut() {
        if rng.random_bool(spec.horizontal_flip_prob) {
            flip_horizontal(row.view_mut(), shape);
        }
        if pad > 0 {
            let dy = rng.random_range(0..=2 * pad);
            let dx = rng.random_range(0..=2 * pad);
            pad_crop(row.view_mut(), shape, pad, dy, dx);
        }
    }
    Ok(())
}
