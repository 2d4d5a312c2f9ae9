//! Gaussian-mixture classification data so experiments need no downloads.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageShape};
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng_from};

/// Class `c` is an equal mixture of `clusters_per_class` components
/// `N(mu_ck, I)`, each `|mu_ck| = separation` with a seeded random direction.
/// More than one cluster per class makes the classes non-linearly separable.
///
/// With `image` set, each mean is a smooth pattern that is symmetric under
/// horizontal flips, so flips and small crops keep examples on-class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
    pub seed: u64,
    #[serde(default)]
    pub test_per_class: usize,
    #[serde(default)]
    pub image: Option<ImageShape>,
    #[serde(default = "one")]
    pub clusters_per_class: usize,
}

fn one() -> usize {
    1
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dim == 0 || self.per_class == 0 || self.clusters_per_class == 0 {
            return Err(Error::Config(format!(
                "synthetic data needs C >= 2, d >= 1, per_class >= 1 and clusters >= 1 (got {}, {}, {}, {})",
                self.num_classes, self.dim, self.per_class, self.clusters_per_class
            )));
        }
        if !(self.separation >= 0.0) {
            return Err(Error::Config("class separation must be >= 0".into()));
        }
        if let Some(img) = self.image {
            if img.len() != self.dim {
                return Err(Error::Config(format!(
                    "image shape {img:?} does not have {} values",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    fn means(&self) -> Vec<Vec<f64>> {
        let mut rng = rng_from(derive_seed(self.seed, 0));
        (0..self.num_classes * self.clusters_per_class)
            .map(|_| {
                let mut v: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                if let Some(img) = self.image {
                    v = smooth_symmetric(&v, img);
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x *= self.separation / norm);
                }
                v
            })
            .collect()
    }

    fn draw(&self, means: &[Vec<f64>], per_class: usize, stream: u64) -> Result<Dataset> {
        let mut rng = rng_from(derive_seed(self.seed, stream));
        let n = per_class * self.num_classes;
        let labels: Vec<usize> = (0..n).map(|i| i % self.num_classes).collect();
        let mut inputs = Array2::<f32>::zeros((n, self.dim));
        let k = self.clusters_per_class;
        for (i, (mut row, &y)) in inputs.rows_mut().into_iter().zip(&labels).enumerate() {
            let mean = &means[y * k + (i / self.num_classes) % k];
            for (x, &m) in row.iter_mut().zip(mean) {
                let z: f64 = rng.sample(StandardNormal);
                *x = (m + z) as f32;
            }
        }
        Dataset::new(inputs, labels, self.num_classes, self.image)
    }
}

/// Mirror-averages each row and applies two 3x3 box blurs per channel.
fn smooth_symmetric(v: &[f64], img: ImageShape) -> Vec<f64> {
    let (h, w) = (img.height, img.width);
    let mut out = v.to_vec();
    for c in 0..img.channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for r in 0..h {
            for col in 0..w / 2 {
                let (a, b) = (r * w + col, r * w + (w - 1 - col));
                let m = 0.5 * (plane[a] + plane[b]);
                plane[a] = m;
                plane[b] = m;
            }
        }
        for _ in 0..2 {
            let src = plane.to_vec();
            for r in 0..h {
                for col in 0..w {
                    let mut sum = 0.0;
                    let mut cnt = 0.0;
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            let (rr, cc) = (r as i64 + dr, col as i64 + dc);
                            if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                                sum += src[rr as usize * w + cc as usize];
                                cnt += 1.0;
                            }
                        }
                    }
                    plane[r * w + col] = sum / cnt;
                }
            }
        }
    }
    out
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    spec.draw(&spec.means(), spec.per_class, 1)
}

/// Training data plus a test set drawn from the same class means.
pub fn make_synthetic_with_test(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    if spec.test_per_class == 0 {
        return Err(Error::Config("test_per_class must be >= 1".into()));
    }
    let means = spec.means();
    Ok((
        spec.draw(&means, spec.per_class, 1)?,
        spec.draw(&means, spec.test_per_class, 2)?,
    ))
}
