use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// A row-major matrix of 64-bit reals with an optional gradient buffer.
///
/// Vectors are stored as `1 × n`; batches put the batch index on rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    value: Array2<f64>,
    #[serde(skip)]
    grad: Option<Array2<f64>>,
}

impl Tensor {
    /// Builds a tensor from a shape and row-major values.
    ///
    /// Only one- and two-dimensional shapes are supported; a one-dimensional
    /// shape `[n]` becomes a `1 × n` row.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let (rows, cols) = match *shape {
            [n] => (1, n),
            [r, c] => (r, c),
            _ => return Err(shape_err(format!("unsupported tensor rank {}", shape.len()))),
        };
        if rows == 0 || cols == 0 {
            return Err(shape_err(format!("tensor extents must be positive, got {shape:?}")));
        }
        if rows * cols != values.len() {
            return Err(shape_err(format!(
                "shape {shape:?} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor construction ({bad})")));
        }
        let value = Array2::from_shape_vec((rows, cols), values).expect("checked shape");
        Ok(Self { value, grad: None })
    }

    pub fn from_array(value: Array2<f64>) -> Self {
        Self { value, grad: None }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_array(Array2::zeros((rows, cols)))
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform_fan_in<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self::from_array(Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound)))
    }

    pub fn shape(&self) -> [usize; 2] {
        let (r, c) = self.value.dim();
        [r, c]
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Array2<f64> {
        &mut self.value
    }

    pub fn values(&self) -> Vec<f64> {
        self.value.iter().copied().collect()
    }

    pub fn grad(&self) -> Option<&Array2<f64>> {
        self.grad.as_ref()
    }

    pub fn set_grad(&mut self, grad: Array2<f64>) -> Result<()> {
        if grad.dim() != self.value.dim() {
            return Err(shape_err(format!(
                "gradient shape {:?} does not match tensor shape {:?}",
                grad.dim(),
                self.value.dim()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }
}

/// A collection of parameter tensors visited in a fixed order.
pub trait Parameterized {
    /// Named parameters, in the same order as [`Parameterized::params_mut`].
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[0, 2], vec![]).is_err());
        assert!(matches!(Tensor::new(&[2], vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
        let t = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.shape(), [1, 3]);
    }

    #[test]
    fn grad_must_match_shape() {
        let mut t = Tensor::zeros(2, 3);
        assert!(t.set_grad(Array2::zeros((3, 2))).is_err());
        assert!(t.set_grad(Array2::ones((2, 3))).is_ok());
        assert_eq!(t.grad().unwrap().sum(), 6.0);
    }
}
