//! Privacy accounting for noisy gradient descent.
//!
//! Each training step releases a Gaussian-noised sum of clipped gradients over a
//! Poisson subsample. [`epsilon_of`] measures the `(epsilon, delta)` cost of a
//! whole schedule and [`calibrate_noise`] inverts it to find the smallest noise
//! multiplier meeting a budget.
//!
//! Two accountants are available through [`Accounting`]: a numerical
//! privacy-loss-distribution accountant (the default, tight up to
//! discretisation) and the Rényi-DP bound over integer orders, which is looser
//! but cheap and analytic.

pub mod pld;
pub mod rdp;

pub use pld::{ComposedLoss, PldOptions};
pub use rdp::{
    compose, default_orders, rdp_gaussian, rdp_subsampled_gaussian, rdp_to_epsilon, subsampled_gaussian_curve,
    Conversion, RdpCurve,
};

use crate::{Error, Result};

/// Training-set size used when only batch size and epochs are known.
pub const CIFAR10_TRAIN_SIZE: usize = 50_000;

/// Lower end of the noise-multiplier search range.
pub const SIGMA_MIN: f64 = 1e-3;
/// Upper end of the noise-multiplier search range.
pub const SIGMA_MAX: f64 = 1e4;
const SIGMA_START: f64 = 10.0;
const BISECTION_WIDTH: f64 = 1e-4;

/// Target `(epsilon, delta)` guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacySpec {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidInput(format!("epsilon {epsilon} must be positive")));
        }
        rdp::check_delta(delta)?;
        Ok(Self { epsilon, delta })
    }
}

/// Poisson subsampling rate and number of noisy steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsampleSchedule {
    pub sample_rate: f64,
    pub steps: u64,
}

impl SubsampleSchedule {
    pub fn new(sample_rate: f64, steps: u64) -> Result<Self> {
        rdp::check_rate(sample_rate)?;
        if steps == 0 {
            return Err(Error::InvalidInput("steps must be at least 1".into()));
        }
        Ok(Self { sample_rate, steps })
    }

    /// `q = batch / n`, `T = epochs * ceil(n / batch)`.
    pub fn from_training(batch_size: usize, epochs: usize, dataset_size: usize) -> Result<Self> {
        if batch_size == 0 || epochs == 0 || dataset_size == 0 {
            return Err(Error::InvalidInput(
                "batch size, epochs and dataset size must be positive".into(),
            ));
        }
        if batch_size > dataset_size {
            return Err(Error::InvalidInput(format!(
                "batch size {batch_size} exceeds dataset size {dataset_size}"
            )));
        }
        let steps_per_epoch = dataset_size.div_ceil(batch_size);
        Self::new(
            batch_size as f64 / dataset_size as f64,
            (epochs * steps_per_epoch) as u64,
        )
    }
}

/// Noise standard deviation in units of the clipping threshold.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NoiseMultiplier(f64);

impl NoiseMultiplier {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_nan() || sigma < 0.0 {
            return Err(Error::InvalidNoise(sigma));
        }
        Ok(Self(sigma))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Which accountant turns a schedule into epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Accounting {
    /// Numerical privacy-loss distribution.
    #[default]
    Pld,
    /// Rényi DP over integer orders `2..=256`.
    Rdp(Conversion),
}

/// Epsilon spent by `schedule` at noise multiplier `sigma`, using the default accountant.
pub fn epsilon_of(sigma: f64, schedule: &SubsampleSchedule, delta: f64) -> Result<f64> {
    epsilon_of_with(sigma, schedule, delta, Accounting::default())
}

pub fn epsilon_of_with(sigma: f64, schedule: &SubsampleSchedule, delta: f64, accounting: Accounting) -> Result<f64> {
    rdp::check_delta(delta)?;
    rdp::check_rate(schedule.sample_rate)?;
    if schedule.sample_rate == 0.0 {
        return Ok(0.0);
    }
    match accounting {
        Accounting::Pld => pld::epsilon(sigma, schedule.sample_rate, schedule.steps, delta),
        Accounting::Rdp(conversion) => {
            let curve = subsampled_gaussian_curve(&default_orders(), schedule.sample_rate, sigma)?;
            rdp_to_epsilon(&compose(&curve, schedule.steps), delta, conversion).map(|(eps, _)| eps)
        }
    }
}

/// Smallest noise multiplier (to within `1e-4`) whose epsilon does not exceed the target.
pub fn calibrate_noise(target: &PrivacySpec, schedule: &SubsampleSchedule) -> Result<NoiseMultiplier> {
    calibrate_noise_with(target, schedule, Accounting::default())
}

pub fn calibrate_noise_with(
    target: &PrivacySpec,
    schedule: &SubsampleSchedule,
    accounting: Accounting,
) -> Result<NoiseMultiplier> {
    let target = PrivacySpec::new(target.epsilon, target.delta)?;
    let fits = |sigma: f64| -> Result<bool> {
        Ok(epsilon_of_with(sigma, schedule, target.delta, accounting)? <= target.epsilon)
    };

    let mut lo = SIGMA_MIN;
    let mut hi = SIGMA_START;
    while !fits(hi)? {
        if hi >= SIGMA_MAX {
            return Err(Error::CalibrationOutOfRange {
                target: target.epsilon,
                lo: SIGMA_MIN,
                hi: SIGMA_MAX,
            });
        }
        lo = hi;
        hi = (2.0 * hi).min(SIGMA_MAX);
    }
    while hi - lo >= BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if fits(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    NoiseMultiplier::new(hi)
}

/// Running account of a fixed-noise training run.
#[derive(Debug, Clone)]
pub struct PrivacyAccountant {
    sigma: f64,
    sample_rate: f64,
    delta: f64,
    steps: u64,
    accounting: Accounting,
}

impl PrivacyAccountant {
    pub fn new(sigma: f64, sample_rate: f64, delta: f64) -> Result<Self> {
        NoiseMultiplier::new(sigma)?;
        rdp::check_rate(sample_rate)?;
        rdp::check_delta(delta)?;
        Ok(Self {
            sigma,
            sample_rate,
            delta,
            steps: 0,
            accounting: Accounting::default(),
        })
    }

    pub fn with_accounting(mut self, accounting: Accounting) -> Self {
        self.accounting = accounting;
        self
    }

    /// Records `n` more noisy steps.
    pub fn step(&mut self, n: u64) {
        self.steps += n;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Epsilon spent so far; zero before the first step and infinite without noise.
    pub fn epsilon(&self) -> Result<f64> {
        if self.steps == 0 || self.sample_rate == 0.0 {
            return Ok(0.0);
        }
        if self.sigma == 0.0 {
            return Ok(f64::INFINITY);
        }
        let schedule = SubsampleSchedule::new(self.sample_rate, self.steps)?;
        epsilon_of_with(self.sigma, &schedule, self.delta, self.accounting)
    }
}
