//! Mean softmax cross-entropy over a batch of logits.

use super::{KernelError, Tensor};

/// Returns (mean loss, gradient w.r.t. logits). The gradient is
/// (softmax - onehot) / batch.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
) -> Result<(f32, Tensor), KernelError> {
    let (n, c) = match logits.shape() {
        [n, c] => (*n, *c),
        s => {
            return Err(KernelError::ShapeMismatch {
                what: "loss logits",
                expected: vec![labels.len(), 0],
                got: s.to_vec(),
            })
        }
    };
    if labels.len() != n {
        return Err(KernelError::ShapeMismatch {
            what: "loss labels",
            expected: vec![n],
            got: vec![labels.len()],
        });
    }
    logits.check_finite("loss input")?;
    let mut total = 0.0f64;
    let mut grad = vec![0.0f32; n * c];
    for (i, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(KernelError::LabelOutOfRange { label, classes: c });
        }
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut denom = 0.0f64;
        for &v in row {
            denom += (v as f64 - max).exp();
        }
        let log_denom = denom.ln();
        total += log_denom - (row[label] as f64 - max);
        for (j, &v) in row.iter().enumerate() {
            let p = ((v as f64 - max).exp() / denom) as f32;
            grad[i * c + j] = (p - if j == label { 1.0 } else { 0.0 }) / n as f32;
        }
    }
    let loss = (total / n as f64) as f32;
    if !loss.is_finite() {
        return Err(KernelError::NonFinite("loss"));
    }
    Ok((loss, Tensor::from_vec(&[n, c], grad)))
}
