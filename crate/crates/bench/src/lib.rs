//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use reinit_core::nn::{init_params, InitDistribution};
use reinit_core::{Network, NetworkSpec, ParamVector};

/// The desk-scale MLP(256, 128) on 64 inputs and 10 classes.
pub fn desk_network() -> (Network, ParamVector<f32>) {
    let spec = NetworkSpec::new(64, vec![256, 128], 10).with_blocks(vec![1, 2]);
    let params = init_params(&spec, &InitDistribution::new(0)).expect("valid spec");
    (Network::new(spec).expect("valid spec"), params)
}

/// A deterministic batch of `rows` inputs and labels.
pub fn batch(rows: usize, dim: usize, classes: usize) -> (Array2<f32>, Vec<usize>) {
    let x = Array2::from_shape_fn((rows, dim), |(i, j)| ((i * 31 + j * 17) % 23) as f32 / 11.0 - 1.0);
    let y = (0..rows).map(|i| i % classes).collect();
    (x, y)
}
