//! Classical classifiers over flattened feature vectors.

mod knn;
mod nbc;
mod svm;

pub use knn::{knn_classify, Knn, DEFAULT_K};
pub use nbc::{GaussianNb, VARIANCE_FLOOR};
pub use svm::{KernelKind, KernelSpec, Svm, SvmOptions};

use rayon::prelude::*;

use crate::data::{Dataset, Split};
use crate::error::shape_err;
use crate::{Error, Result};

/// `N x D` row-major features with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVectors {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    pub split: Option<Split>,
}

impl LabeledVectors {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(shape_err("feature dimension must be positive"));
        }
        if features.len() != dim * labels.len() {
            return Err(shape_err(format!(
                "{} values for {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            features,
            dim,
            labels,
            split: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(shape_err("rows differ in length"));
        }
        Self::new(rows.concat(), dim, labels)
    }

    /// Flattens each image of a dataset.
    pub fn from_dataset(data: &Dataset) -> Self {
        let dim = data.image_shape().iter().product();
        Self {
            features: data.images().data().to_vec(),
            dim,
            labels: data.labels().to_vec(),
            split: Some(data.split),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub(crate) fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// A fitted classifier.
pub trait Classifier: Sync {
    fn predict(&self, query: &[f64]) -> Result<usize>;
}

/// Accuracy and misclassification rate; `loss == 1 - accuracy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub correct: usize,
    pub total: usize,
}

impl Evaluation {
    pub fn from_counts(correct: usize, total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        let accuracy = correct as f64 / total as f64;
        Ok(Self {
            accuracy,
            loss: 1.0 - accuracy,
            correct,
            total,
        })
    }
}

pub fn evaluate<C: Classifier + ?Sized>(model: &C, split: &LabeledVectors) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let predictions: Vec<usize> = (0..split.len())
        .into_par_iter()
        .map(|i| model.predict(split.row(i)))
        .collect::<Result<_>>()?;
    let correct = predictions.iter().zip(split.labels()).filter(|(p, l)| p == l).count();
    Evaluation::from_counts(correct, split.len())
}

/// Index of the largest value; the first wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
