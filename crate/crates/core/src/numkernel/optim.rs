//! SGD with momentum and weight decay, and the cosine learning-rate schedule.

use std::collections::BTreeMap;

use super::{KernelError, ParamKey, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

/// v <- momentum * v + grad + weight_decay * w;  w <- w - lr * v.
/// Only keys present in `grads` are touched.
pub fn sgd_step(
    store: &mut ParamStore,
    grads: &BTreeMap<ParamKey, Tensor>,
    cfg: SgdConfig,
) -> Result<(), KernelError> {
    for (&key, grad) in grads {
        let slot = store.get_slot_mut(key)?;
        if slot.value.shape() != grad.shape() {
            return Err(KernelError::ShapeMismatch {
                what: "sgd grad",
                expected: slot.value.shape().to_vec(),
                got: grad.shape().to_vec(),
            });
        }
        grad.check_finite("sgd grad")?;
        let w = slot.value.data_mut();
        let v = slot.momentum.data_mut();
        for i in 0..w.len() {
            v[i] = cfg.momentum * v[i] + grad.data()[i] + cfg.weight_decay * w[i];
            w[i] -= cfg.lr * v[i];
        }
    }
    Ok(())
}

/// Cosine annealing from `lr_max` at step 0 down to 0 at `total_steps`.
/// Steps beyond the horizon clamp to 0.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f32) -> f32 {
    if step >= total_steps {
        return 0.0;
    }
    let frac = step as f64 / total_steps as f64;
    (lr_max as f64 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())) as f32
}
