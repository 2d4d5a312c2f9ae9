//! Symmetric label noise: a fixed fraction of training labels replaced by
//! labels drawn uniformly from all classes (the true class included).

use rand::seq::index::sample;
use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::seeds::rng_from;

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    pub base: Dataset,
    pub noisy_labels: Vec<usize>,
    pub noise_mask: Vec<bool>,
    pub q: f64,
    pub noise_seed: u64,
}

impl NoisyDataset {
    pub fn num_masked(&self) -> usize {
        self.noise_mask.iter().filter(|&&m| m).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        self.noise_mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// The dataset as seen by training: inputs with the corrupted labels.
    pub fn training_view(&self) -> Dataset {
        Dataset {
            labels: self.noisy_labels.clone(),
            ..self.base.clone()
        }
    }
}

/// Number of corrupted examples for fraction `q` of `n`.
pub fn noise_count(q: f64, n: usize) -> usize {
    (q * n as f64).floor() as usize
}

pub fn inject_label_noise(ds: &Dataset, q: f64, seed: u64) -> Result<NoisyDataset> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("noise fraction must be in [0, 1], got {q}")));
    }
    let n = ds.len();
    let k = noise_count(q, n);
    let mut rng = rng_from(seed);
    let mut chosen = sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    let mut noisy_labels = ds.labels.clone();
    let mut noise_mask = vec![false; n];
    for i in chosen {
        noise_mask[i] = true;
        noisy_labels[i] = rng.random_range(0..ds.num_classes);
    }
    Ok(NoisyDataset {
        base: ds.clone(),
        noisy_labels,
        noise_mask,
        q,
        noise_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ds(n: usize) -> Dataset {
        Dataset::new(Array2::zeros((n, 2)), (0..n).map(|i| i % 10).collect(), 10, None).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let d = ds(50);
        let nd = inject_label_noise(&d, 0.0, 1).unwrap();
        assert_eq!(nd.noisy_labels, d.labels);
        assert_eq!(nd.num_masked(), 0);
    }

    #[test]
    fn floor_count() {
        let nd = inject_label_noise(&ds(10), 0.2, 5).unwrap();
        assert_eq!(nd.num_masked(), 2);
        assert_eq!(noise_count(0.25, 10), 2);
        assert_eq!(inject_label_noise(&ds(7), 1.0, 5).unwrap().num_masked(), 7);
    }

    #[test]
    fn untouched_outside_mask_and_deterministic() {
        let d = ds(200);
        let a = inject_label_noise(&d, 0.4, 77).unwrap();
        let b = inject_label_noise(&d, 0.4, 77).unwrap();
        assert_eq!(a, b);
        for i in 0..200 {
            if !a.noise_mask[i] {
                assert_eq!(a.noisy_labels[i], d.labels[i]);
            }
        }
        assert_eq!(a.training_view().labels, a.noisy_labels);
    }

    #[test]
    fn rejects_bad_fraction() {
        assert!(inject_label_noise(&ds(5), 1.5, 0).is_err());
        assert!(inject_label_noise(&ds(5), -0.1, 0).is_err());
    }
}
