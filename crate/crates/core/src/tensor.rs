//! Dense row-major f64 tensors.
//!
//! All trainable state and every intermediate of the differentiable graph is
//! one of these. Construction rejects NaN/Inf so numeric faults surface at the
//! boundary where they happen instead of ten operations later.

use crate::error::{Result, SvatError};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that `values` fills `shape` exactly and that
    /// every entry is finite.
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(SvatError::Dimension(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(SvatError::Numeric(format!(
                "non-finite value in tensor of shape {shape:?}"
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![v])
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Tensor::new(vec![n], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Shape-preserving in-place access for the optimizer.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    /// The single entry of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(SvatError::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.values[0])
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Tensor { shape, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_value_count() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(SvatError::Dimension(_))
        ));
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            Tensor::vector(vec![1.0, f64::NAN]),
            Err(SvatError::Numeric(_))
        ));
        assert!(matches!(
            Tensor::scalar(f64::INFINITY),
            Err(SvatError::Numeric(_))
        ));
    }

    #[test]
    fn item_requires_single_element() {
        assert_eq!(Tensor::scalar(3.5).unwrap().item().unwrap(), 3.5);
        assert!(Tensor::vector(vec![1.0, 2.0]).unwrap().item().is_err());
    }
}
