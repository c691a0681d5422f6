//! Noisy stochastic gradient descent with per-example clipping.
//!
//! Each step Poisson-samples the training set, clips every example's gradient
//! to L2 norm `C` (one norm over all parameters), sums, adds `N(0, sigma^2 C^2)`
//! noise per coordinate and divides by the expected batch size `qN`. The
//! result feeds one of four update rules.

mod optim;

pub use optim::{
    Optimizer, OptimizerState, ADAGRAD_EPS, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, RMSPROP_DECAY, RMSPROP_EPS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::accountant::{self, PrivacySpec, SubsampleSchedule};
use crate::autograd::{self, PerSampleGrads};
use crate::convnet::Model;
use crate::data::{Dataset, PoissonSampler};
use crate::{Error, Result};

/// Largest allowed gap between a supplied noise multiplier and the calibrated one.
pub const SIGMA_TOLERANCE: f64 = 0.05;
const NOISE_STREAM: u64 = 0x6e6f_6973_65;

/// Scales each row by `min(1, C / ||row||)`.
pub fn clip_per_sample(grads: &PerSampleGrads, clip_norm: f64) -> Result<PerSampleGrads> {
    let mut out = grads.clone();
    clip_in_place(&mut out, clip_norm)?;
    Ok(out)
}

pub fn clip_in_place(grads: &mut PerSampleGrads, clip_norm: f64) -> Result<()> {
    if !(clip_norm > 0.0) {
        return Err(Error::InvalidThreshold(clip_norm));
    }
    for row in grads.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > clip_norm {
            let scale = clip_norm / norm;
            row.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(())
}

/// `(sum_i clip(g_i) + N(0, sigma^2 C^2 I)) / expected_batch`.
pub fn privatize<R: Rng + ?Sized>(
    grads: &PerSampleGrads,
    clip_norm: f64,
    sigma: f64,
    expected_batch: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidNoise(sigma));
    }
    if !(expected_batch > 0.0) {
        return Err(Error::InvalidInput(format!(
            "expected batch size {expected_batch} must be positive"
        )));
    }
    let clipped = clip_per_sample(grads, clip_norm)?;
    let mut total = clipped.sum_rows();
    if sigma > 0.0 {
        let std = sigma * clip_norm;
        for t in total.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *t += std * z;
        }
    }
    total.iter_mut().for_each(|t| *t /= expected_batch);
    Ok(total)
}

/// One training configuration; mirrors a row of the experiment table.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTrainConfig {
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` calibrates from `(epsilon, delta)`; `Some(0.0)` trains without noise.
    pub noise_multiplier: Option<f64>,
    pub seed: u64,
    pub runs: usize,
}

impl Default for DpTrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            batch_size: 256,
            epsilon: 5.0,
            delta: 1e-5,
            clip_norm: 1.0,
            learning_rate: 1e-3,
            epochs: 10,
            noise_multiplier: None,
            seed: 0,
            runs: 1,
        }
    }
}

impl DpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.runs == 0 {
            return Err(Error::Config("batch size, epochs and runs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidThreshold(self.clip_norm));
        }
        if let Some(s) = self.noise_multiplier {
            if s.is_nan() || s < 0.0 {
                return Err(Error::InvalidNoise(s));
            }
        }
        PrivacySpec::new(self.epsilon, self.delta)?;
        Ok(())
    }

    /// Subsampling schedule over a training set of `dataset_size` examples.
    pub fn schedule(&self, dataset_size: usize) -> Result<SubsampleSchedule> {
        SubsampleSchedule::from_training(self.batch_size, self.epochs, dataset_size)
    }

    /// Noise multiplier to train with: the supplied one after a consistency check,
    /// or the calibrated one.
    pub fn resolve_sigma(&self, dataset_size: usize) -> Result<f64> {
        self.validate()?;
        match self.noise_multiplier {
            Some(s) if s == 0.0 => Ok(0.0),
            given => {
                let spec = PrivacySpec::new(self.epsilon, self.delta)?;
                let calibrated = accountant::calibrate_noise(&spec, &self.schedule(dataset_size)?)?.get();
                match given {
                    Some(s) if (s - calibrated).abs() > SIGMA_TOLERANCE => Err(Error::Config(format!(
                        "noise multiplier {s} is inconsistent with epsilon {} (calibrated {calibrated:.3})",
                        self.epsilon
                    ))),
                    Some(s) => Ok(s),
                    None => Ok(calibrated),
                }
            }
        }
    }
}

/// Metrics at the end of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub experiment_id: String,
    pub run: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub epsilon_spent: f64,
    pub sigma: f64,
}

/// Mean cross-entropy and accuracy of `model` on `data`.
pub fn evaluate_model<M: Model + ?Sized>(model: &M, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let logits = model.logits(data.images())?;
    let loss = autograd::softmax_cross_entropy(&logits, data.labels())?;
    let correct = autograd::argmax_rows(&logits)
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok((loss, correct as f64 / data.len() as f64))
}

/// Trains `model` in place and returns one record per epoch.
///
/// Runs `epochs * ceil(N / batch)` steps, each over an independent Poisson draw
/// with rate `batch / N`; an empty draw still takes a pure-noise step. Epsilon
/// is re-derived from the accountant at every epoch boundary.
pub fn train<M: Model + ?Sized>(
    config: &DpTrainConfig,
    model: &mut M,
    train_set: &Dataset,
    test_set: &Dataset,
    experiment_id: &str,
    run: usize,
) -> Result<Vec<MetricsRecord>> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Data("training and test sets must be nonempty".into()));
    }
    let n = train_set.len();
    let sigma = config.resolve_sigma(n)?;
    let schedule = config.schedule(n)?;
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let mut sampler = PoissonSampler::new(schedule.sample_rate, n, config.seed)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
    let expected = sampler.expected_batch();
    let mut optimizer = OptimizerState::new(config.optimizer, model.params().len());
    let mut records = Vec::with_capacity(config.epochs);
    log::info!(
        "{experiment_id} run {run}: sigma {sigma:.4}, q {:.5}, {} steps",
        schedule.sample_rate,
        schedule.steps
    );

    for epoch in 1..=config.epochs {
        for _ in 0..steps_per_epoch {
            let batch = sampler.sample();
            let grads = if batch.is_empty() {
                PerSampleGrads::with_capacity(0, model.params().len())
            } else {
                let (images, labels) = train_set.batch(&batch)?;
                model.per_sample_grads(&images, &labels)?.0
            };
            let noisy = privatize(&grads, config.clip_norm, sigma, expected, &mut noise_rng)?;
            optimizer.step(model.params_mut(), &noisy, config.learning_rate)?;
        }
        let steps = (epoch * steps_per_epoch) as u64;
        let epsilon_spent = if sigma == 0.0 {
            f64::INFINITY
        } else {
            accountant::epsilon_of(sigma, &SubsampleSchedule::new(schedule.sample_rate, steps)?, config.delta)?
        };
        let (train_loss, train_acc) = evaluate_model(model, train_set)?;
        let (test_loss, test_acc) = evaluate_model(model, test_set)?;
        log::info!(
            "{experiment_id} run {run} epoch {epoch}: train {train_acc:.4} test {test_acc:.4} eps {epsilon_spent:.3}"
        );
        records.push(MetricsRecord {
            experiment_id: experiment_id.to_string(),
            run,
            epoch,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            epsilon_spent,
            sigma,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f64]]) -> PerSampleGrads {
        let v: Vec<Vec<f64>> = data.iter().map(|r| r.to_vec()).collect();
        PerSampleGrads::from_rows(v[0].len(), &v).unwrap()
    }

    #[test]
    fn clip_examples() {
        let g = rows(&[&[2.0, 0.0], &[0.3, 0.4]]);
        let c = clip_per_sample(&g, 1.0).unwrap();
        assert_eq!(c.row(0), &[1.0, 0.0]);
        assert_eq!(c.row(1), &[0.3, 0.4]);
        assert!(matches!(clip_per_sample(&g, 0.0), Err(Error::InvalidThreshold(_))));
        assert!(matches!(clip_per_sample(&g, -1.0), Err(Error::InvalidThreshold(_))));
    }

    #[test]
    fn noiseless_privatize_is_clipped_mean() {
        let g = rows(&[&[0.1, 0.2], &[0.3, -0.4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = privatize(&g, 1.0, 0.0, 2.0, &mut rng).unwrap();
        assert_eq!(out, vec![(0.1 + 0.3) / 2.0, (0.2 - 0.4) / 2.0]);
        assert!(matches!(privatize(&g, 1.0, -1.0, 2.0, &mut rng), Err(Error::InvalidNoise(_))));
    }

    #[test]
    fn empty_batch_is_pure_noise() {
        let g = PerSampleGrads::with_capacity(0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = privatize(&g, 1.0, 1.0, 4.0, &mut rng).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|v| *v != 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(DpTrainConfig::default().validate().is_ok());
        let bad = DpTrainConfig {
            batch_size: 0,
            ..DpTrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = DpTrainConfig {
            noise_multiplier: Some(-0.5),
            ..DpTrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidNoise(_))));
    }

    #[test]
    fn sigma_resolution() {
        let cfg = DpTrainConfig {
            epochs: 100,
            ..DpTrainConfig::default()
        };
        let s = cfg.resolve_sigma(50_000).unwrap();
        assert!((s - 0.912).abs() < 0.02);
        let given = DpTrainConfig {
            noise_multiplier: Some(0.91),
            ..cfg.clone()
        };
        assert_eq!(given.resolve_sigma(50_000).unwrap(), 0.91);
        let wrong = DpTrainConfig {
            noise_multiplier: Some(2.0),
            ..cfg.clone()
        };
        assert!(matches!(wrong.resolve_sigma(50_000), Err(Error::Config(_))));
        let free = DpTrainConfig {
            noise_multiplier: Some(0.0),
            ..cfg
        };
        assert_eq!(free.resolve_sigma(50_000).unwrap(), 0.0);
    }
}
