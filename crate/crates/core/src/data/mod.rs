//! Datasets: loaders, synthetic generation, normalization, augmentation,
//! splitting and label-noise injection.

mod augment;
mod csv;
mod idx;
mod noise;
mod split;
mod synthetic;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::augment::{augment, flip_horizontal, pad_crop, AugmentSpec};
pub use self::csv::{load_csv, save_csv};
pub use self::idx::{load_idx, load_idx_limit, parse_idx_images, parse_idx_labels};
pub use self::noise::{inject_label_noise, NoisyDataset};
pub use self::split::{make_chunks, split, split_indices, ChunkStream};
pub use self::synthetic::{make_synthetic, make_synthetic_with_test, SyntheticSpec};

/// Per-channel statistics used by the common ImageNet-style preprocessing.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Geometry of flattened images stored channel-major (`c`, then rows, then
/// columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-channel affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn imagenet() -> Self {
        Self {
            mean: IMAGENET_MEAN.to_vec(),
            std: IMAGENET_STD.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub image: Option<ImageShape>,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(inputs: Array2<f32>, labels: Vec<usize>, num_classes: usize, image: Option<ImageShape>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Data(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if inputs.nrows() == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Data(format!("label {y} at row {i} outside [0, {num_classes})")));
        }
        if let Some(img) = image {
            if img.len() != inputs.ncols() {
                return Err(Error::Shape(format!(
                    "image shape {img:?} has {} values, rows have {}",
                    img.len(),
                    inputs.ncols()
                )));
            }
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            image,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            image: self.image,
            normalization: self.normalization.clone(),
        }
    }

    /// Column ranges forming one normalization channel each: image planes, or
    /// individual features for tabular data.
    fn channel_columns(&self) -> Vec<std::ops::Range<usize>> {
        match self.image {
            Some(img) => {
                let plane = img.height * img.width;
                (0..img.channels).map(|c| c * plane..(c + 1) * plane).collect()
            }
            None => (0..self.dim()).map(|j| j..j + 1).collect(),
        }
    }

    /// Population mean/std per channel. Constant channels get std 1.
    pub fn fit_normalization(&self) -> Normalization {
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for cols in self.channel_columns() {
            let view = self.inputs.slice(ndarray::s![.., cols]);
            let count = view.len() as f64;
            let m = view.iter().map(|&x| x as f64).sum::<f64>() / count;
            let v = view.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / count;
            let s = v.sqrt();
            mean.push(m as f32);
            std.push(if s > 1e-12 { s as f32 } else { 1.0 });
        }
        Normalization { mean, std }
    }

    /// Applies `norm` in place and records it.
    pub fn normalize(&mut self, norm: &Normalization) -> Result<()> {
        let channels = self.channel_columns();
        if norm.mean.len() != channels.len() || norm.std.len() != channels.len() {
            return Err(Error::Config(format!(
                "normalization has {} channels, data has {}",
                norm.mean.len(),
                channels.len()
            )));
        }
        if norm.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("normalization std entries must be > 0".into()));
        }
        for (c, cols) in channels.into_iter().enumerate() {
            let (m, s) = (norm.mean[c] as f64, norm.std[c] as f64);
            self.inputs
                .slice_mut(ndarray::s![.., cols])
                .mapv_inplace(|x| ((x as f64 - m) / s) as f32);
        }
        self.normalization = Some(norm.clone());
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalization_standardizes_channels() {
        let x = array![
            [1.0f32, 10.0, 3.0],
            [3.0, 30.0, 3.0],
            [2.0, 20.0, 3.0],
            [6.0, -4.0, 3.0]
        ];
        let mut ds = Dataset::new(x, vec![0, 1, 0, 1], 2, None).unwrap();
        let norm = ds.fit_normalization();
        ds.normalize(&norm).unwrap();
        for j in 0..2 {
            let col = ds.inputs.column(j);
            let m = col.iter().map(|&v| v as f64).sum::<f64>() / 4.0;
            let v = col.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-6);
            assert!((v.sqrt() - 1.0).abs() < 1e-6);
        }
        assert_eq!(norm.std[2], 1.0);
    }

    #[test]
    fn rejects_inconsistent_data() {
        assert!(Dataset::new(Array2::zeros((2, 3)), vec![0], 2, None).is_err());
        assert!(Dataset::new(Array2::zeros((1, 3)), vec![2], 2, None).is_err());
        assert!(Dataset::new(Array2::zeros((0, 3)), vec![], 2, None).is_err());
        let img = ImageShape {
            channels: 1,
            height: 2,
            width: 2,
        };
        assert!(Dataset::new(Array2::zeros((1, 3)), vec![0], 2, Some(img)).is_err());
    }

    #[test]
    fn imagenet_constants_need_three_channels() {
        let img = ImageShape {
            channels: 1,
            height: 1,
            width: 2,
        };
        let mut ds = Dataset::new(Array2::zeros((1, 2)), vec![0], 1, Some(img)).unwrap();
        assert!(ds.normalize(&Normalization::imagenet()).is_err());
    }
}
