//! Row-major f32 tensor.

use super::KernelError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must match shape"
        );
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn check_finite(&self, what: &'static str) -> Result<(), KernelError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(KernelError::NonFinite(what))
        }
    }

    /// Feed shape and data (little-endian f32 bits) into a digest.
    pub fn digest_into(&self, h: &mut crate::digest::Fnv1a64) {
        h.write_u64(self.shape.len() as u64);
        for &d in &self.shape {
            h.write_u64(d as u64);
        }
        for &v in &self.data {
            h.write_bytes(&v.to_bits().to_le_bytes());
        }
    }
}
