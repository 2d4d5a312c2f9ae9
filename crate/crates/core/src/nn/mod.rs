//! Feedforward network engine: parameters, forward pass, losses and exact
//! gradients by backpropagation.

mod checkpoint;
mod layout;
mod loss;
mod network;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use layout::{LayerLayout, NetworkSpec, Role, Segment};
pub use loss::{check_teacher, kl_divergence, log_softmax_rows, softmax_cross_entropy, softmax_rows, PROB_SUM_TOL};
pub use network::{FrozenNormLayer, LossGrad, Network, NORM_STD_FLOOR, NORM_VAR_EPS};
pub(crate) use params::l2_norm;
pub use params::{init_params, weight_norm, InitDistribution, ParamVector, Real};
