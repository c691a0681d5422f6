//! Rényi-DP bounds for the Gaussian and Poisson-subsampled Gaussian mechanisms.

use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

/// Largest order on the default integer grid.
pub const MAX_ORDER: u32 = 256;

/// Integer orders `2..=256`.
pub fn default_orders() -> Vec<u32> {
    (2..=MAX_ORDER).collect()
}

/// How an RDP curve is turned into an `(epsilon, delta)` guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conversion {
    /// `rdp(a) + ln((a-1)/a) - (ln delta + ln a)/(a-1)`.
    #[default]
    Improved,
    /// `rdp(a) + ln(1/delta)/(a-1)`.
    Classic,
}

/// Per-order RDP values, additive under composition.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpCurve {
    orders: Vec<f64>,
    values: Vec<f64>,
}

impl RdpCurve {
    pub fn new(orders: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if orders.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} orders but {} values",
                orders.len(),
                values.len()
            )));
        }
        if let Some(&bad) = orders.iter().find(|&&a| !(a > 1.0) || !a.is_finite()) {
            return Err(Error::InvalidOrder(bad));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("orders must be strictly increasing".into()));
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::InvalidInput("RDP values must be nonnegative".into()));
        }
        Ok(Self { orders, values })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }
}

/// RDP of the Gaussian mechanism with unit sensitivity: `order / (2 sigma^2)`.
pub fn rdp_gaussian(order: f64, sigma: f64) -> Result<f64> {
    if !(order > 1.0) {
        return Err(Error::InvalidOrder(order));
    }
    check_sigma(sigma)?;
    Ok(order / (2.0 * sigma * sigma))
}

/// RDP at integer `order` of the Gaussian mechanism applied to a Poisson
/// subsample with inclusion probability `q`.
///
/// Evaluates `ln(sum_k C(a,k) (1-q)^(a-k) q^k exp(k(k-1)/(2 sigma^2))) / (a-1)`
/// entirely in the log domain.
pub fn rdp_subsampled_gaussian(order: u32, q: f64, sigma: f64) -> Result<f64> {
    if order < 2 {
        return Err(Error::InvalidOrder(f64::from(order)));
    }
    check_rate(q)?;
    check_sigma(sigma)?;
    if q == 0.0 {
        return Ok(0.0);
    }
    let a = f64::from(order);
    let ln_q = q.ln();
    let ln_keep = (-q).ln_1p();
    let ln_fact_a = ln_gamma(a + 1.0);
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);

    let mut terms = Vec::with_capacity(order as usize + 1);
    for k in 0..=order {
        let kf = f64::from(k);
        let ln_binom = ln_fact_a - ln_gamma(kf + 1.0) - ln_gamma(a - kf + 1.0);
        let t = ln_binom + xlogy(a - kf, ln_keep) + xlogy(kf, ln_q) + kf * (kf - 1.0) * inv_two_var;
        terms.push(t);
    }
    let value = log_sum_exp(&terms) / (a - 1.0);
    // Rounding in the binomial logs can push a zero-loss curve slightly negative.
    Ok(value.max(0.0))
}

/// Per-step curve of the subsampled Gaussian over the given integer orders.
pub fn subsampled_gaussian_curve(orders: &[u32], q: f64, sigma: f64) -> Result<RdpCurve> {
    let values = orders
        .iter()
        .map(|&a| rdp_subsampled_gaussian(a, q, sigma))
        .collect::<Result<Vec<_>>>()?;
    RdpCurve::new(orders.iter().map(|&a| f64::from(a)).collect(), values)
}

/// Linear composition of `steps` identical releases.
pub fn compose(per_step: &RdpCurve, steps: u64) -> RdpCurve {
    let t = steps as f64;
    RdpCurve {
        orders: per_step.orders.clone(),
        values: per_step.values.iter().map(|v| v * t).collect(),
    }
}

/// Converts an RDP curve to `(epsilon, best_order)` at the given `delta`.
pub fn rdp_to_epsilon(curve: &RdpCurve, delta: f64, conversion: Conversion) -> Result<(f64, f64)> {
    if curve.is_empty() {
        return Err(Error::InvalidInput("empty RDP curve".into()));
    }
    check_delta(delta)?;
    let ln_delta = delta.ln();
    let mut best = (f64::INFINITY, curve.orders[0]);
    for (&a, &r) in curve.orders.iter().zip(&curve.values) {
        let eps = match conversion {
            Conversion::Classic => r - ln_delta / (a - 1.0),
            Conversion::Improved => r + ((a - 1.0) / a).ln() - (ln_delta + a.ln()) / (a - 1.0),
        };
        if eps < best.0 {
            best = (eps, a);
        }
    }
    Ok((best.0.max(0.0), best.1))
}

fn xlogy(x: f64, ln_y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * ln_y
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidNoise(sigma));
    }
    if sigma == 0.0 {
        return Err(Error::InfinitePrivacyLoss);
    }
    Ok(())
}

pub(crate) fn check_rate(q: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidRate(q));
    }
    Ok(())
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta {delta} must lie in (0, 1)")));
    }
    Ok(())
}
