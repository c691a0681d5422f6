//! Laplace input perturbation.
//!
//! Every element receives independent `Lap(0, b)` noise with
//! `b = sensitivity / epsilon`. Sensitivity is per element and noised values
//! are not clamped.

use rand::Rng;

use crate::autograd::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceParams {
    epsilon: f64,
    sensitivity: f64,
}

impl LaplaceParams {
    pub fn new(epsilon: f64, sensitivity: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParams(format!("epsilon {epsilon} must be positive")));
        }
        if !(sensitivity > 0.0 && sensitivity.is_finite()) {
            return Err(Error::InvalidParams(format!("sensitivity {sensitivity} must be positive")));
        }
        Ok(Self { epsilon, sensitivity })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    /// Scale `b = sensitivity / epsilon`.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }
}

/// Inverse CDF of `Lap(0, b)` at `u - 1/2`, for `u` in `(-1/2, 1/2)`.
pub fn laplace_from_uniform(u: f64, b: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One draw of `Lap(0, b)`.
pub fn sample_laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> Result<f64> {
    if !(b >= 0.0) || b.is_infinite() {
        return Err(Error::InvalidScale(b));
    }
    Ok(draw(b, rng))
}

fn draw<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    loop {
        let u = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            return laplace_from_uniform(u, b);
        }
    }
}

/// Adds independent Laplace noise to every element.
pub fn laplace_perturb<R: Rng + ?Sized>(data: &Tensor, params: &LaplaceParams, rng: &mut R) -> Result<Tensor> {
    let b = params.scale();
    let noised = data.data().iter().map(|x| x + draw(b, rng)).collect();
    Tensor::from_vec(data.shape().to_vec(), noised)
}
