use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::{LayerLayout, NetworkSpec, Role};
use crate::error::{Error, Result};

/// Floating point type the engine can run in. Training uses `f32`; the
/// gradient oracles run the same code in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Flat parameter vector with the layer layout it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<R = f32> {
    values: Vec<R>,
    layout: Arc<LayerLayout>,
}

impl<R: Real> ParamVector<R> {
    pub fn zeros(layout: Arc<LayerLayout>) -> Self {
        Self {
            values: vec![R::zero(); layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<LayerLayout>, values: Vec<R>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, layout expects {}",
                values.len(),
                layout.total_len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("parameter {i} is not finite")));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[R] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [R] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<R> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &ParamVector<R>) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub(crate) fn ensure_same_layout(&self, other: &ParamVector<R>) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Shape("parameter vectors have different layouts".into()))
        }
    }

    /// Weight matrix of `layer` as `fan_out x fan_in`.
    pub fn weight(&self, layer: usize) -> ArrayView2<'_, R> {
        let s = self.layout.weight(layer);
        ArrayView2::from_shape((s.fan_out, s.fan_in), &self.values[s.range()])
            .expect("layout segment matches its shape")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, R> {
        ArrayView1::from(&self.values[self.layout.bias(layer).range()])
    }

    /// Euclidean norm of the whole vector.
    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Euclidean norm of one block's parameters.
    pub fn block_norm(&self, block: usize) -> f64 {
        l2_norm(&self.values[self.layout.block_range(block)])
    }

    pub fn block_norms(&self) -> Vec<f64> {
        (1..=self.layout.num_blocks()).map(|b| self.block_norm(b)).collect()
    }

    pub fn cast<S: Real>(&self) -> ParamVector<S> {
        ParamVector {
            values: self
                .values
                .iter()
                .map(|v| S::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
            layout: Arc::clone(&self.layout),
        }
    }
}

pub(crate) fn l2_norm<R: Real>(values: &[R]) -> f64 {
    values
        .iter()
        .map(|v| {
            let x = v.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Euclidean norm of the full parameter vector.
pub fn weight_norm<R: Real>(params: &ParamVector<R>) -> f64 {
    params.norm()
}

/// Initialization distribution: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero. Sampling is a pure function of the seed and the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitDistribution {
    pub seed: u64,
}

impl InitDistribution {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn sample<R: Real>(&self, layout: &Arc<LayerLayout>) -> ParamVector<R> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut values = Vec::with_capacity(layout.total_len());
        for seg in layout.segments() {
            match seg.role {
                Role::Weight => {
                    let bound = 1.0 / (seg.fan_in as f64).sqrt();
                    values.extend((0..seg.len).map(|_| R::from_f64_lossy(rng.random_range(-bound..=bound))));
                }
                Role::Bias => values.extend(std::iter::repeat_n(R::zero(), seg.len)),
            }
        }
        ParamVector {
            values,
            layout: Arc::clone(layout),
        }
    }
}

/// Samples fresh parameters for `spec`.
pub fn init_params<R: Real>(spec: &NetworkSpec, dist: &InitDistribution) -> Result<ParamVector<R>> {
    let layout = Arc::new(LayerLayout::from_spec(spec)?);
    Ok(dist.sample(&layout))
}
