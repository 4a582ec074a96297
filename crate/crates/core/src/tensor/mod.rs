//! Dense float32 tensors and a small reverse-mode autodiff tape.
//!
//! The engine deliberately supports a fixed set of operations (see
//! [`OpKind`]) and no general broadcasting. Values are row-major; image
//! batches use the `[N, C, H, W]` layout throughout the crate.

pub mod check;
mod kernels;
mod optim;
mod tape;

pub use optim::{adam_step, AdamConfig, AdamState};
pub use tape::{Gradients, OpKind, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    BadLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a scalar tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
    #[error("parameter/gradient mismatch: {0}")]
    ParamMismatch(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// A row-major float32 array. Holds only finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::BadLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "new" });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from values already known to be finite and sized.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(value.is_finite());
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(&[], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::BadLength {
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        Ok(Self { shape, data: self.data })
    }

    /// Applies `f` elementwise, rejecting non-finite results.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "map" });
        }
        Ok(Self::from_parts(self.shape.clone(), data))
    }
}

/// An ordered, named collection of trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.names.push(name.into());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Replaces the tensor stored under `name`, keeping its position.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| TensorError::ParamMismatch(format!("no parameter `{name}`")))?;
        if self.tensors[i].shape() != tensor.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "Parameters::set",
                shapes: vec![self.tensors[i].shape().to_vec(), tensor.shape().to_vec()],
            });
        }
        self.tensors[i] = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length_and_finiteness() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![0.0; 3]),
            Err(TensorError::BadLength { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2], vec![0.0, f32::NAN]),
            Err(TensorError::NonFinite { .. })
        ));
        let t = Tensor::new(vec![], vec![3.0]).unwrap();
        assert_eq!(t.item().unwrap(), 3.0);
    }

    #[test]
    fn parameters_set_keeps_shape() {
        let mut p = Parameters::new();
        p.push("w", Tensor::zeros(&[2, 3]));
        assert!(p.set("w", Tensor::zeros(&[3, 2])).is_err());
        p.set("w", Tensor::full(&[2, 3], 1.0)).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
        assert_eq!(p.count(), 6);
    }
}
