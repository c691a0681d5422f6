//! Numerical privacy-loss-distribution accounting.
//!
//! For the Poisson-subsampled Gaussian mechanism the privacy loss of one step
//! is `Y = ln(1 - q + q exp(mu X - mu^2/2))` with `X ~ (1-q) N(0,1) + q N(mu,1)`
//! and `mu = 1/sigma`. Its distribution function is available in closed form,
//! so one step is discretised onto a uniform grid, `T` steps are composed by a
//! circular FFT convolution, and `delta(eps) = E[(1 - exp(eps - Y_T))_+]` is read
//! off the composed mass function.
//!
//! The grid position of each step is shifted so the discrete mean equals the
//! continuous one; rounding errors then accumulate like a random walk rather
//! than linearly in `T`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use statrs::function::erf::erfc;

use super::rdp::{self, Conversion};
use crate::{Error, Result};

/// Discretisation knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PldOptions {
    /// Grid spacing is `mesh_scale / sqrt(steps)`.
    pub mesh_scale: f64,
    /// Upper bound on the composed grid length.
    pub max_grid: usize,
}

impl Default for PldOptions {
    fn default() -> Self {
        Self {
            mesh_scale: 0.05,
            max_grid: 1 << 22,
        }
    }
}

/// Fraction of the target delta reserved for truncated tails.
const TAIL_FRACTION: f64 = 1e-6;
/// Below this the composed loss has probability at most `exp(-LOWER_FLOOR)`.
const LOWER_FLOOR: f64 = -40.0;
/// Integration range for the standard normal in `x`.
const X_RANGE: f64 = 38.0;

/// One step of the subsampled Gaussian, described by its privacy loss.
#[derive(Debug, Clone, Copy)]
struct StepLoss {
    q: f64,
    mu: f64,
}

impl StepLoss {
    fn ln_keep(&self) -> f64 {
        if self.q < 1.0 {
            (-self.q).ln_1p()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// `x` at which the loss equals `t` (for `t` above the support minimum).
    fn inverse(&self, t: f64) -> f64 {
        (self.z(t) + 0.5 * self.mu * self.mu) / self.mu
    }

    /// `ln((exp(t) - 1 + q) / q)`, stable for large `t`.
    fn z(&self, t: f64) -> f64 {
        let q = self.q;
        if q == 1.0 {
            return t;
        }
        if t > 0.0 {
            t - q.ln() + ((q - 1.0) * (-t).exp()).ln_1p()
        } else {
            ((t.exp_m1() + q) / q).ln()
        }
    }

    fn loss_at(&self, x: f64) -> f64 {
        let a = self.q.ln() + self.mu * x - 0.5 * self.mu * self.mu;
        let b = self.ln_keep();
        let hi = a.max(b);
        if hi == f64::NEG_INFINITY {
            return hi;
        }
        hi + ((a - hi).exp() + (b - hi).exp()).ln()
    }

    /// `P(Y > t)`.
    fn survival(&self, t: f64) -> f64 {
        if self.q < 1.0 && t <= self.ln_keep() {
            return 1.0;
        }
        let z = self.z(t);
        let mu = self.mu;
        (1.0 - self.q) * normal_sf(z / mu + 0.5 * mu) + self.q * normal_sf(z / mu - 0.5 * mu)
    }

    fn density_x(&self, x: f64) -> f64 {
        let phi = |v: f64| (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (1.0 - self.q) * phi(x) + self.q * phi(x - self.mu)
    }

    /// Mean and variance of the loss restricted to `x` in `[x_lo, x_hi]`,
    /// normalised by the restricted mass.
    fn moments(&self, x_lo: f64, x_hi: f64) -> (f64, f64) {
        if self.q == 1.0 && x_lo <= self.mu - X_RANGE && x_hi >= self.mu + X_RANGE {
            return (0.5 * self.mu * self.mu, self.mu * self.mu);
        }
        if x_hi <= x_lo {
            return (0.0, 0.0);
        }
        let h_target = (0.1 / self.mu).min(0.01);
        let n = (((x_hi - x_lo) / h_target).ceil() as usize).clamp(2_000, 2_000_000);
        let h = (x_hi - x_lo) / n as f64;
        let (mut mass, mut first, mut second) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let x = x_lo + h * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let p = self.density_x(x) * w;
            if p == 0.0 {
                continue;
            }
            let y = self.loss_at(x);
            mass += p;
            first += p * y;
            second += p * y * y;
        }
        if mass == 0.0 {
            return (0.0, 0.0);
        }
        let mean = first / mass;
        (mean, (second / mass - mean * mean).max(0.0))
    }
}

fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// The distribution of the privacy loss after `T` compositions, on a uniform grid.
#[derive(Debug, Clone)]
pub struct ComposedLoss {
    start: f64,
    spacing: f64,
    pmf: Vec<f64>,
    /// Upper bound on the delta contribution of mass dropped from the grid.
    lost: f64,
}

impl ComposedLoss {
    /// Composes `steps` releases of the subsampled Gaussian.
    ///
    /// `delta_hint` sizes the truncated tails; mass dropped is bounded by
    /// `1e-6 * delta_hint` and carried in [`ComposedLoss::delta`].
    pub fn new(sigma: f64, q: f64, steps: u64, delta_hint: f64) -> Result<Self> {
        Self::with_options(sigma, q, steps, delta_hint, PldOptions::default())
    }

    pub fn with_options(sigma: f64, q: f64, steps: u64, delta_hint: f64, opts: PldOptions) -> Result<Self> {
        rdp::check_sigma(sigma)?;
        rdp::check_rate(q)?;
        rdp::check_delta(delta_hint)?;
        if steps == 0 {
            return Err(Error::InvalidInput("steps must be at least 1".into()));
        }
        if q == 0.0 {
            return Ok(Self {
                start: 0.0,
                spacing: 1.0,
                pmf: vec![1.0],
                lost: 0.0,
            });
        }
        let step = StepLoss { q, mu: 1.0 / sigma };
        let t = steps as f64;
        let eta = delta_hint * TAIL_FRACTION;

        // Composed window: the Chernoff bound from RDP caps the upper tail at eta.
        let orders = rdp::default_orders();
        let curve = rdp::subsampled_gaussian_curve(&orders, q, sigma)?;
        let (w_hi_rdp, _) = rdp::rdp_to_epsilon(&rdp::compose(&curve, steps), eta, Conversion::Classic)?;

        let (m1, v1) = step.moments(-X_RANGE, step.mu + X_RANGE);
        let (mean_t, sd_t) = (t * m1, (t * v1).sqrt());
        let w_hi = w_hi_rdp.max(mean_t + 20.0 * sd_t) + 1.0;
        let w_lo = (mean_t - 20.0 * sd_t).max(LOWER_FLOOR).min(w_hi - 1.0);

        let mut spacing = opts.mesh_scale / t.sqrt();
        let needed = ((w_hi - w_lo) / spacing).ceil() as usize + 1;
        let n = needed.next_power_of_two().max(64);
        let n = if n > opts.max_grid {
            spacing = (w_hi - w_lo) / (opts.max_grid - 1) as f64;
            opts.max_grid
        } else {
            n
        };

        // Single-step support.
        let sd1 = v1.sqrt();
        let t_min = if q < 1.0 { step.ln_keep() } else { m1 - 40.0 * sd1 };
        let mut upper = if q < 1.0 {
            w_hi - (t - 1.0) * t_min
        } else {
            m1 + 40.0 * sd1
        };
        // No need to go beyond the point where the single-step tail is negligible.
        let tail_budget = eta / t;
        let mut probe = t_min.max(0.0) + 1.0;
        while step.survival(probe) > tail_budget && probe < upper {
            probe = 2.0 * probe + 1.0;
        }
        upper = upper.min(probe);
        let j0 = (t_min / spacing).round() as i64;
        let j1_max = j0 + 16 * n as i64;
        let j1 = ((upper / spacing).ceil() as i64).clamp(j0, j1_max);
        let bins = (j1 - j0 + 1) as usize;

        let mut edges_sf = Vec::with_capacity(bins + 1);
        edges_sf.push(if q < 1.0 { 1.0 } else { step.survival(t_min) });
        for j in j0..=j1 {
            edges_sf.push(step.survival((j as f64 + 0.5) * spacing));
        }
        let single: Vec<f64> = edges_sf.windows(2).map(|w| (w[0] - w[1]).max(0.0)).collect();
        let step_tail = *edges_sf.last().unwrap_or(&0.0);
        let mass: f64 = single.iter().sum();

        // Mean-preserving shift of the single-step grid.
        let disc_mean = single
            .iter()
            .enumerate()
            .map(|(i, p)| p * (j0 + i as i64) as f64 * spacing)
            .sum::<f64>()
            / mass;
        let x_lo = if q < 1.0 { -X_RANGE } else { step.inverse(t_min) };
        let x_hi = step.inverse((j1 as f64 + 0.5) * spacing).min(step.mu + X_RANGE);
        let (cont_mean, _) = step.moments(x_lo, x_hi);
        let shift = cont_mean - disc_mean;

        let composed = self_convolve(&single, n, steps);

        let base = t * (j0 as f64 * spacing + shift);
        let k_lo = ((w_lo - base) / spacing).floor() as i64;
        let n_i = n as i64;
        let pmf: Vec<f64> = (0..n_i).map(|i| composed[(k_lo + i).rem_euclid(n_i) as usize]).collect();
        Ok(Self {
            start: base + k_lo as f64 * spacing,
            spacing,
            pmf,
            lost: t * step_tail + eta,
        })
    }

    /// Smallest delta achieved at `epsilon`.
    pub fn delta(&self, epsilon: f64) -> f64 {
        let mut d = self.lost;
        for (i, &p) in self.pmf.iter().enumerate() {
            let y = self.start + i as f64 * self.spacing;
            if y > epsilon {
                d += p * -(epsilon - y).exp_m1();
            }
        }
        d.min(1.0)
    }

    /// Smallest nonnegative epsilon with `delta(epsilon) <= delta`.
    pub fn epsilon(&self, delta: f64) -> f64 {
        let target = delta - self.lost;
        if target <= 0.0 {
            return f64::INFINITY;
        }
        let n = self.pmf.len();
        // Suffix sums: tail mass, and sum_k p_k exp(y_i - y_k) over k >= i.
        let mut tail = vec![0.0; n + 1];
        let mut weighted = vec![0.0; n + 1];
        let decay = (-self.spacing).exp();
        for i in (0..n).rev() {
            tail[i] = tail[i + 1] + self.pmf[i];
            weighted[i] = self.pmf[i] + decay * weighted[i + 1];
        }
        let at = |i: usize| self.start + i as f64 * self.spacing;
        let i = (0..n).find(|&i| tail[i] - weighted[i] <= target).unwrap_or(n - 1);
        let eps = if tail[i] <= target {
            if i == 0 {
                0.0
            } else {
                at(i - 1)
            }
        } else {
            let e = at(i) + ((tail[i] - target) / weighted[i]).ln();
            if i == 0 {
                e
            } else {
                e.clamp(at(i - 1), at(i))
            }
        };
        eps.max(0.0)
    }

    pub fn grid_len(&self) -> usize {
        self.pmf.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total probability mass on the grid.
    pub fn mass(&self) -> f64 {
        self.pmf.iter().sum()
    }
}

/// `steps`-fold circular self-convolution of `single` on a ring of length `n`.
fn self_convolve(single: &[f64], n: usize, steps: u64) -> Vec<f64> {
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (i, &p) in single.iter().enumerate() {
        buf[i % n].re += p;
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let t = steps as f64;
    for z in buf.iter_mut() {
        let r = z.norm();
        *z = if r < 1e-300 {
            Complex::new(0.0, 0.0)
        } else {
            Complex::from_polar((r.ln() * t).exp(), z.arg() * t)
        };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|z| (z.re * scale).max(0.0)).collect()
}

/// Epsilon of `steps` subsampled-Gaussian releases at `delta`.
pub fn epsilon(sigma: f64, q: f64, steps: u64, delta: f64) -> Result<f64> {
    if q == 0.0 {
        rdp::check_rate(q)?;
        return Ok(0.0);
    }
    Ok(ComposedLoss::new(sigma, q, steps, delta)?.epsilon(delta))
}
