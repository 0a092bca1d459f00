use super::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Named trainable leaf.
#[derive(Debug, Clone)]
pub struct Parameter<T: Scalar> {
    name: String,
    tensor: Tensor<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            tensor: Tensor::leaf(shape, data)?,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = super::numel(shape);
        Self::new(name, shape, vec![T::zero(); n]).expect("shape matches")
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], value: T) -> Self {
        let n = super::numel(shape);
        Self::new(name, shape, vec![value; n]).expect("shape matches")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn shape(&self) -> &[usize] {
        self.tensor.shape()
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn grad(&self) -> Vec<T> {
        self.tensor.grad().unwrap_or_else(|| vec![T::zero(); self.numel()])
    }

    pub fn zero_grad(&self) {
        self.tensor.zero_grad();
    }

    pub fn values(&self) -> Vec<T> {
        self.tensor.to_vec()
    }

    /// Overwrites the values in place; the length must not change.
    pub fn set_values(&self, values: &[T]) {
        let mut d = self.tensor.data_mut();
        assert_eq!(d.len(), values.len(), "parameter {} resized", self.name);
        d.copy_from_slice(values);
    }
}
