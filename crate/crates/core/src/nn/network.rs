use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use super::layout::{LayerLayout, NetworkSpec};
use super::loss::{check_labels, check_teacher, kl_unchecked, softmax_cross_entropy, softmax_rows};
use super::params::{ParamVector, Real};
use crate::error::{Error, Result};

/// Smallest per-unit std a frozen normalization layer may hold.
pub const NORM_STD_FLOOR: f64 = 1e-5;

/// Added to each unit's variance before the square root when a frozen layer
/// is fitted, as in batch norm. Fitted stds are therefore at least
/// `sqrt(NORM_VAR_EPS)`, well above [`NORM_STD_FLOOR`].
pub const NORM_VAR_EPS: f64 = 1e-5;

/// Parameter-free standardization `(x - mean) / std` applied to the output of
/// the last layer of `after_block`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenNormLayer {
    pub after_block: usize,
    pub after_layer: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FrozenNormLayer {
    /// Always zero: the layer holds statistics, not parameters.
    pub fn trainable_params(&self) -> usize {
        0
    }

    fn apply<R: Real>(&self, acts: &mut Array2<R>) {
        for mut row in acts.axis_iter_mut(Axis(0)) {
            for ((x, &m), &s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - R::from_f64_lossy(m)) / R::from_f64_lossy(s);
            }
        }
    }

    fn backward<R: Real>(&self, grad: &mut Array2<R>) {
        for mut row in grad.axis_iter_mut(Axis(0)) {
            for (g, &s) in row.iter_mut().zip(&self.std) {
                *g /= R::from_f64_lossy(s);
            }
        }
    }
}

/// A ReLU MLP: architecture, parameter layout and the optional frozen
/// normalization layer inserted by layer-wise re-initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layout: Arc<LayerLayout>,
    norm: Option<FrozenNormLayer>,
}

/// Loss pieces and gradient returned by [`Network::loss_and_grad`].
#[derive(Debug, Clone)]
pub struct LossGrad<R> {
    pub loss: R,
    pub cross_entropy: R,
    pub kl: R,
    pub grad: Vec<R>,
    pub logits: Array2<R>,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let layout = Arc::new(LayerLayout::from_spec(&spec)?);
        Ok(Self {
            spec,
            layout,
            norm: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn norm_layer(&self) -> Option<&FrozenNormLayer> {
        self.norm.as_ref()
    }

    /// Installs `norm`, replacing any previous normalization layer.
    pub fn set_norm_layer(&mut self, norm: Option<FrozenNormLayer>) -> Result<()> {
        if let Some(n) = &norm {
            let widths = self.spec.widths();
            let width = widths
                .get(n.after_layer + 1)
                .filter(|_| n.after_layer < self.spec.num_layers())
                .ok_or_else(|| Error::Config(format!("no layer {}", n.after_layer)))?;
            if n.mean.len() != *width || n.std.len() != *width {
                return Err(Error::Shape(format!(
                    "norm layer width {} does not match layer width {width}",
                    n.mean.len()
                )));
            }
            if n.std.iter().any(|&s| !(s >= NORM_STD_FLOOR)) {
                return Err(Error::Config(format!("norm layer std must be >= {NORM_STD_FLOOR}")));
            }
        }
        self.norm = norm;
        Ok(())
    }

    fn check<R: Real>(&self, params: &ParamVector<R>, inputs: &ArrayView2<'_, R>) -> Result<()> {
        if **params.layout() != *self.layout {
            return Err(Error::Shape("parameter layout does not match network".into()));
        }
        if inputs.ncols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                inputs.ncols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    fn layer_forward<R: Real>(&self, params: &ParamVector<R>, layer: usize, input: &ArrayView2<'_, R>) -> Array2<R> {
        let w = params.weight(layer);
        let mut z = Array2::<R>::zeros((input.nrows(), w.nrows()));
        general_mat_mul(R::one(), input, &w.t(), R::zero(), &mut z);
        z += &params.bias(layer);
        z
    }

    /// Runs layers `0..=last_layer` and returns that layer's output, including
    /// activation and any normalization layer placed within the range.
    pub fn forward_prefix<R: Real>(
        &self,
        params: &ParamVector<R>,
        inputs: ArrayView2<'_, R>,
        last_layer: usize,
        with_norm: bool,
    ) -> Result<Array2<R>> {
        self.check(params, &inputs)?;
        let out_layer = self.spec.num_layers() - 1;
        let mut act = inputs.to_owned();
        for layer in 0..=last_layer.min(out_layer) {
            let mut z = self.layer_forward(params, layer, &act.view());
            if layer < out_layer {
                z.mapv_inplace(|x| x.max(R::zero()));
            }
            if with_norm {
                if let Some(n) = self.norm.as_ref().filter(|n| n.after_layer == layer) {
                    n.apply(&mut z);
                }
            }
            act = z;
        }
        Ok(act)
    }

    /// Logits for a batch of inputs (rows).
    pub fn forward<R: Real>(&self, params: &ParamVector<R>, inputs: ArrayView2<'_, R>) -> Result<Array2<R>> {
        self.forward_prefix(params, inputs, self.spec.num_layers() - 1, true)
    }

    pub fn predict<R: Real>(&self, params: &ParamVector<R>, inputs: ArrayView2<'_, R>) -> Result<Vec<usize>> {
        let logits = self.forward(params, inputs)?;
        Ok(logits
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, R::neg_infinity()),
                        |(bi, bv), (i, &v)| {
                            if v > bv {
                                (i, v)
                            } else {
                                (bi, bv)
                            }
                        },
                    )
                    .0
            })
            .collect())
    }

    /// Loss `CE + beta * KL(teacher || student)` and its exact gradient.
    ///
    /// The teacher rows are constants. With no teacher, or `beta == 0`, the
    /// result is bit-identical to the plain cross-entropy computation.
    pub fn loss_and_grad<R: Real>(
        &self,
        params: &ParamVector<R>,
        inputs: ArrayView2<'_, R>,
        labels: &[usize],
        teacher: Option<ArrayView2<'_, R>>,
        beta: R,
    ) -> Result<LossGrad<R>> {
        self.check(params, &inputs)?;
        let batch = inputs.nrows();
        let classes = self.spec.num_classes;
        check_labels(labels, batch, classes)?;
        if let Some(t) = &teacher {
            if t.dim() != (batch, classes) {
                return Err(Error::Shape(format!(
                    "teacher rows {:?} do not align with batch ({batch}, {classes})",
                    t.dim()
                )));
            }
            check_teacher(t.view())?;
            if beta < R::zero() || !beta.is_finite() {
                return Err(Error::Config(format!("beta_distill must be >= 0, got {beta}")));
            }
        }
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }

        let layers = self.spec.num_layers();
        // acts[l] is the input to layer l; pre[l] the pre-activation of layer l.
        let mut acts: Vec<Array2<R>> = Vec::with_capacity(layers);
        let mut pre: Vec<Array2<R>> = Vec::with_capacity(layers);
        acts.push(inputs.to_owned());
        for layer in 0..layers {
            let z = self.layer_forward(params, layer, &acts[layer].view());
            let mut a = if layer + 1 < layers {
                z.mapv(|x| x.max(R::zero()))
            } else {
                z.clone()
            };
            if let Some(n) = self.norm.as_ref().filter(|n| n.after_layer == layer) {
                n.apply(&mut a);
            }
            pre.push(z);
            acts.push(a);
        }
        let logits = acts.pop().expect("output activation");

        let n = R::from_usize(batch).unwrap();
        let probs = softmax_rows(logits.view());
        let cross_entropy = softmax_cross_entropy(logits.view(), labels)?;

        // d loss / d logits
        let mut delta = probs.clone();
        for (mut row, &y) in delta.axis_iter_mut(Axis(0)).zip(labels) {
            row[y] -= R::one();
        }
        let mut kl = R::zero();
        if let Some(t) = &teacher {
            kl = kl_unchecked(t.view(), logits.view()) / n;
            if beta != R::zero() {
                delta.zip_mut_with(&(&probs - t), |d, &g| *d += beta * g);
            }
        }
        let loss = cross_entropy + beta * kl;
        delta.mapv_inplace(|d| d / n);

        let mut grad = vec![R::zero(); params.len()];
        for layer in (0..layers).rev() {
            if let Some(nl) = self.norm.as_ref().filter(|nl| nl.after_layer == layer) {
                nl.backward(&mut delta);
            }
            if layer + 1 < layers {
                delta.zip_mut_with(&pre[layer], |d, &z| {
                    if z <= R::zero() {
                        *d = R::zero();
                    }
                });
            }
            let wseg = self.layout.weight(layer);
            {
                let mut gw = ArrayViewMut2::from_shape((wseg.fan_out, wseg.fan_in), &mut grad[wseg.range()])
                    .expect("weight segment shape");
                general_mat_mul(R::one(), &delta.t(), &acts[layer], R::zero(), &mut gw);
            }
            let gb: Array1<R> = delta.sum_axis(Axis(0));
            grad[self.layout.bias(layer).range()].copy_from_slice(gb.as_slice().expect("contiguous"));
            if layer > 0 {
                let mut next = Array2::<R>::zeros((batch, wseg.fan_in));
                general_mat_mul(R::one(), &delta, &params.weight(layer), R::zero(), &mut next);
                delta = next;
            }
        }

        Ok(LossGrad {
            loss,
            cross_entropy,
            kl,
            grad,
            logits,
        })
    }
}
