use std::f64::consts::PI;

use super::{argmax, Classifier, LabeledVectors};
use crate::error::shape_err;
use crate::{Error, Result};

/// Smallest per-feature variance used in the likelihood.
pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Gaussian naive Bayes with per-class, per-feature mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    log_prior: Vec<f64>,
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

impl GaussianNb {
    /// Every label in `0..=max(label)` must occur at least once.
    pub fn fit(train: &LabeledVectors) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("naive Bayes needs training data".into()));
        }
        let (classes, dim) = (train.num_classes(), train.dim());
        let mut count = vec![0usize; classes];
        let mut mean = vec![vec![0.0; dim]; classes];
        for (row, &l) in train.rows().zip(train.labels()) {
            count[l] += 1;
            mean[l].iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        if let Some(c) = count.iter().position(|&n| n == 0) {
            return Err(Error::Data(format!("class {c} has no training samples")));
        }
        for (m, &n) in mean.iter_mut().zip(&count) {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut var = vec![vec![0.0; dim]; classes];
        for (row, &l) in train.rows().zip(train.labels()) {
            for ((v, x), m) in var[l].iter_mut().zip(row).zip(&mean[l]) {
                *v += (x - m) * (x - m);
            }
        }
        for (v, &n) in var.iter_mut().zip(&count) {
            v.iter_mut().for_each(|s| *s = (*s / n as f64).max(VARIANCE_FLOOR));
        }
        let total = train.len() as f64;
        Ok(Self {
            log_prior: count.iter().map(|&n| (n as f64 / total).ln()).collect(),
            mean,
            var,
        })
    }

    pub fn classes(&self) -> usize {
        self.log_prior.len()
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.mean[class]
    }

    pub fn variance(&self, class: usize) -> &[f64] {
        &self.var[class]
    }

    pub fn log_prior(&self, class: usize) -> f64 {
        self.log_prior[class]
    }

    /// Log prior plus summed log-likelihood, per class.
    pub fn log_joint(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.mean[0].len() {
            return Err(shape_err(format!(
                "query has {} features, model has {}",
                query.len(),
                self.mean[0].len()
            )));
        }
        Ok((0..self.classes())
            .map(|c| {
                self.log_prior[c]
                    + query
                        .iter()
                        .zip(&self.mean[c])
                        .zip(&self.var[c])
                        .map(|((x, m), v)| -0.5 * (2.0 * PI * v).ln() - (x - m) * (x - m) / (2.0 * v))
                        .sum::<f64>()
            })
            .collect())
    }
}

impl Classifier for GaussianNb {
    fn predict(&self, query: &[f64]) -> Result<usize> {
        Ok(argmax(&self.log_joint(query)?))
    }
}
