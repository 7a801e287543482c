use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense N-mode tensor stored row-major (last index fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor dimensions must be positive, got {dims:?}"
            )));
        }
        let expected: usize = dims.iter().product();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![value; n])
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n: usize = dims.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut index = vec![0usize; dims.len()];
        for _ in 0..n {
            values.push(f(&index));
            for k in (0..dims.len()).rev() {
                index[k] += 1;
                if index[k] < dims[k] {
                    break;
                }
                index[k] = 0;
            }
        }
        Self::new(dims, values)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.dims[k + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.dims.len());
        index
            .iter()
            .zip(self.strides())
            .map(|(i, s)| i * s)
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.values[self.offset(index)]
    }

    /// Number of entries in one mode-1 slice, i.e. the column count of the
    /// mode-1 unfolding.
    pub fn slice_len(&self) -> usize {
        self.dims[1..].iter().product()
    }

    /// Mode-1 unfolding as (rows, cols). The storage is already in this layout.
    pub fn unfold1_shape(&self) -> (usize, usize) {
        (self.dims[0], self.slice_len())
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.slice_len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn slice_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.slice_len();
        &mut self.values[i * n..(i + 1) * n]
    }

    /// Rebuilds a tensor from a mode-1 unfolding.
    pub fn refold1(rows: usize, rest: &[usize], values: Vec<f64>) -> Result<Self> {
        let mut dims = Vec::with_capacity(rest.len() + 1);
        dims.push(rows);
        dims.extend_from_slice(rest);
        Self::new(dims, values)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
