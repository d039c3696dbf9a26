//! Minimal deterministic differentiable numeric kernel: dense / conv / pool /
//! identity / zero primitives with exact analytic gradients, softmax
//! cross-entropy, SGD with momentum and weight decay, and the cosine
//! learning-rate schedule.
//!
//! Everything is 32-bit floats with f64 accumulation in a fixed order, so a
//! given seed and input produce bit-identical results run to run.

mod loss;
mod ops;
mod optim;
mod store;
mod tensor;

pub use loss::softmax_cross_entropy;
pub use ops::{
    add_into, avgpool2d_backward, avgpool2d_forward, concat_last_axis, conv2d_backward,
    conv2d_forward, dense_backward, dense_forward, global_avg_pool_backward,
    global_avg_pool_forward, op_backward, op_forward, relu_backward, relu_forward,
    split_last_axis, tanh_backward, tanh_forward, OpCache,
};
pub use optim::{cosine_lr, sgd_step, SgdConfig};
pub use store::{init_tensor, key_seed, ParamKey, ParamRole, ParamStore, Slot};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KernelError {
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch { what: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("op {0} does not take parameters")]
    UnexpectedParams(&'static str),
    #[error("op {0} requires parameters")]
    ParamsRequired(&'static str),
}
