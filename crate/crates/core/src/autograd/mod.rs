//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! The free functions ([`conv2d`], [`linear`], ...) are plain forward
//! evaluations. [`Tape`] records the same operations so gradients can be
//! replayed, either for a scalar loss ([`Tape::backward`]) or one example at a
//! time ([`Tape::per_sample_backward`]).

pub(crate) mod kernels;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::shape_err;
use crate::Result;

/// Cross-correlation of `[B,Cin,H,W]` with `[Cout,Cin,kH,kW]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    kernels::conv2d_forward(input, kernel, bias, stride, padding)
}

/// `y = x Wᵀ + b` per row.
pub fn linear(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    kernels::linear_forward(input, weight, bias)
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_parts(input.shape().to_vec(), input.data().iter().map(|v| v.max(0.0)).collect())
}

/// Non-overlapping `size x size` average pooling.
pub fn avgpool2d(input: &Tensor, size: usize) -> Result<Tensor> {
    kernels::avgpool_forward(input, size)
}

/// Mean cross-entropy of `[B,K]` logits against integer labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let rows = kernels::cross_entropy_rows(logits, labels)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Per-example cross-entropy.
pub fn cross_entropy_per_example(logits: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    kernels::cross_entropy_rows(logits, labels)
}

/// Row-wise argmax.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// One flattened gradient per example, all of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleGrads {
    dim: usize,
    data: Vec<f64>,
}

impl PerSampleGrads {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            if !data.is_empty() {
                return Err(shape_err("zero-length rows cannot hold data"));
            }
        } else if data.len() % dim != 0 {
            return Err(shape_err(format!("{} values do not split into rows of {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut out = Self::with_capacity(rows.len(), dim);
        for row in rows {
            out.push_row(row)?;
        }
        Ok(out)
    }

    pub fn with_capacity(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(rows * dim),
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(shape_err(format!("row of {} values, expected {}", row.len(), self.dim)));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    /// Number of examples.
    pub fn batch(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    /// Parameter count per row.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub(crate) fn rows_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.data.chunks_exact_mut(self.dim.max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Elementwise sum of all rows.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        for row in self.rows() {
            total.iter_mut().zip(row).for_each(|(t, r)| *t += r);
        }
        total
    }
}
