use std::fmt;
use std::str::FromStr;

use super::{argmax, Classifier, LabeledVectors};
use crate::error::shape_err;
use crate::{Error, Result};

/// Curvature substituted when a pair's second derivative is not positive.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Linear,
    Poly,
    Rbf,
    Sigmoid,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [KernelKind::Linear, KernelKind::Poly, KernelKind::Rbf, KernelKind::Sigmoid];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Poly => "poly",
            KernelKind::Rbf => "rbf",
            KernelKind::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(KernelKind::Linear),
            "poly" | "polynomial" => Ok(KernelKind::Poly),
            "rbf" => Ok(KernelKind::Rbf),
            "sigmoid" => Ok(KernelKind::Sigmoid),
            other => Err(Error::Config(format!("unknown kernel `{other}`"))),
        }
    }
}

/// `linear: <x,y>`, `poly: (g<x,y> + c0)^d`, `rbf: exp(-g|x-y|^2)`, `sigmoid: tanh(g<x,y> + c0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, degree: u32, gamma: f64, coef0: f64) -> Result<Self> {
        if kind != KernelKind::Linear && !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("kernel gamma {gamma} must be positive")));
        }
        if kind == KernelKind::Poly && degree == 0 {
            return Err(Error::Config("polynomial degree must be at least 1".into()));
        }
        Ok(Self {
            kind,
            degree,
            gamma,
            coef0,
        })
    }

    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            degree: 1,
            gamma: 1.0,
            coef0: 0.0,
        }
    }

    pub fn rbf(gamma: f64) -> Result<Self> {
        Self::new(KernelKind::Rbf, 3, gamma, 0.0)
    }

    /// Degree 3, `gamma = 1 / dim`, `coef0 = 0`.
    pub fn with_defaults(kind: KernelKind, dim: usize) -> Result<Self> {
        Self::new(kind, 3, 1.0 / dim.max(1) as f64, 0.0)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let dot = || x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        match self.kind {
            KernelKind::Linear => dot(),
            KernelKind::Poly => (self.gamma * dot() + self.coef0).powi(self.degree as i32),
            KernelKind::Rbf => (-self.gamma * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp(),
            KernelKind::Sigmoid => (self.gamma * dot() + self.coef0).tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmOptions {
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the maximal KKT violation falls below this.
    pub tolerance: f64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iter: 100_000,
            tolerance: 1e-3,
        }
    }
}

/// Dual solution of one binary problem.
#[derive(Debug, Clone, PartialEq)]
struct Binary {
    /// `alpha_i * y_i`.
    coef: Vec<f64>,
    rho: f64,
    converged: bool,
    iterations: usize,
}

/// Solves `min 1/2 a'Qa - e'a` s.t. `0 <= a <= C`, `y'a = 0` by maximal-violating-pair SMO.
fn solve_binary(kernel: &[f64], n: usize, y: &[f64], opts: &SvmOptions) -> Binary {
    let c = opts.c;
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > gmax {
                (i, gmax) = (t, v);
            }
            if low(alpha[t], y[t]) && v < gmin {
                (j, gmin) = (t, v);
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < opts.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (qii, qjj, qij) = (q(i, i), q(j, j), q(i, j));
        if y[i] != y[j] {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    // rho from free vectors, or the middle of the feasible interval.
    let free: Vec<f64> = (0..n)
        .filter(|&t| alpha[t] > 0.0 && alpha[t] < c)
        .map(|t| y[t] * grad[t])
        .collect();
    let rho = if free.is_empty() {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        for t in 0..n {
            let yg = y[t] * grad[t];
            let at_upper = alpha[t] >= c;
            let at_lower = alpha[t] <= 0.0;
            if (at_upper && y[t] < 0.0) || (at_lower && y[t] > 0.0) {
                ub = ub.min(yg);
            } else if (at_upper && y[t] > 0.0) || (at_lower && y[t] < 0.0) {
                lb = lb.max(yg);
            }
        }
        match (ub.is_finite(), lb.is_finite()) {
            (true, true) => 0.5 * (ub + lb),
            (true, false) => ub,
            (false, true) => lb,
            (false, false) => 0.0,
        }
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    Binary {
        coef: alpha.iter().zip(y).map(|(a, yt)| a * yt).collect(),
        rho,
        converged,
        iterations,
    }
}

/// One-vs-rest soft-margin kernel SVM.
#[derive(Debug, Clone)]
pub struct Svm {
    kernel: KernelSpec,
    support: LabeledVectors,
    /// Classes with a trained binary problem, in ascending order.
    classes: Vec<usize>,
    machines: Vec<Binary>,
}

impl Svm {
    pub fn fit(train: &LabeledVectors, kernel: KernelSpec, opts: &SvmOptions) -> Result<Self> {
        if !(opts.c > 0.0) {
            return Err(Error::Config(format!("regularization {} must be positive", opts.c)));
        }
        let n = train.len();
        let mut present = vec![false; train.num_classes()];
        for &l in train.labels() {
            present[l] = true;
        }
        let classes: Vec<usize> = (0..present.len()).filter(|&c| present[c]).collect();
        if classes.len() < 2 {
            return Err(Error::Data("SVM training needs at least two classes".into()));
        }
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = kernel.eval(train.row(i), train.row(j));
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }
        let tasks: Vec<usize> = if classes.len() == 2 { vec![classes[1]] } else { classes.clone() };
        let mut machines = Vec::with_capacity(tasks.len());
        for &class in &tasks {
            let y: Vec<f64> = train.labels().iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let m = solve_binary(&gram, n, &y, opts);
            if !m.converged {
                log::warn!(
                    "SVM ({} kernel) for class {class} stopped after {} iterations without converging",
                    kernel.kind,
                    m.iterations
                );
            }
            machines.push(m);
        }
        Ok(Self {
            kernel,
            support: train.clone(),
            classes,
            machines,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// Whether every binary problem met the tolerance.
    pub fn converged(&self) -> bool {
        self.machines.iter().all(|m| m.converged)
    }

    /// Decision value per trained binary problem. With two classes there is a single
    /// value, positive for the larger label.
    pub fn decision_values(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.support.dim() {
            return Err(shape_err(format!(
                "query has {} features, model has {}",
                query.len(),
                self.support.dim()
            )));
        }
        let k: Vec<f64> = self.support.rows().map(|row| self.kernel.eval(row, query)).collect();
        Ok(self
            .machines
            .iter()
            .map(|m| m.coef.iter().zip(&k).map(|(c, k)| c * k).sum::<f64>() - m.rho)
            .collect())
    }
}

impl Classifier for Svm {
    fn predict(&self, query: &[f64]) -> Result<usize> {
        let values = self.decision_values(query)?;
        if self.classes.len() == 2 {
            return Ok(if values[0] > 0.0 { self.classes[1] } else { self.classes[0] });
        }
        Ok(self.classes[argmax(&values)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::evaluate;

    fn xor() -> LabeledVectors {
        LabeledVectors::new(vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0], 2, vec![0, 0, 1, 1]).unwrap()
    }

    #[test]
    fn kernel_identities() {
        let x = [1.0, 2.0, -0.5];
        let y = [0.5, -1.0, 2.0];
        assert_eq!(KernelSpec::rbf(0.7).unwrap().eval(&x, &x), 1.0);
        assert_eq!(KernelSpec::linear().eval(&x, &y), 0.5 - 2.0 - 1.0);
        let poly = KernelSpec::new(KernelKind::Poly, 2, 1.0, 1.0).unwrap();
        assert_eq!(poly.eval(&x, &y), (1.0f64 - 2.5).powi(2));
        assert!(KernelSpec::rbf(0.0).is_err());
        assert!(KernelSpec::new(KernelKind::Poly, 0, 1.0, 0.0).is_err());
    }

    #[test]
    fn separable_pair() {
        let t = LabeledVectors::new(vec![-1.0, 1.0], 1, vec![0, 1]).unwrap();
        let svm = Svm::fit(&t, KernelSpec::linear(), &SvmOptions::default()).unwrap();
        assert!(svm.converged());
        assert_eq!(svm.predict(&[-1.0]).unwrap(), 0);
        assert_eq!(svm.predict(&[1.0]).unwrap(), 1);
        assert!(svm.decision_values(&[1.0]).unwrap()[0] > 0.0);
    }

    #[test]
    fn xor_needs_a_nonlinear_kernel() {
        let opts = SvmOptions::default();
        let rbf = Svm::fit(&xor(), KernelSpec::rbf(1.0).unwrap(), &opts).unwrap();
        assert_eq!(evaluate(&rbf, &xor()).unwrap().accuracy, 1.0);
        let lin = Svm::fit(&xor(), KernelSpec::linear(), &opts).unwrap();
        assert!(evaluate(&lin, &xor()).unwrap().accuracy <= 0.75);
    }

    #[test]
    fn flipping_labels_flips_decisions() {
        let pts = vec![0.0, 0.2, 1.0, 1.3, 2.2, 2.9, 0.7, 1.9];
        let a = LabeledVectors::new(pts.clone(), 2, vec![0, 1, 1, 0]).unwrap();
        let b = LabeledVectors::new(pts, 2, vec![1, 0, 0, 1]).unwrap();
        let k = KernelSpec::rbf(0.5).unwrap();
        let sa = Svm::fit(&a, k, &SvmOptions::default()).unwrap();
        let sb = Svm::fit(&b, k, &SvmOptions::default()).unwrap();
        for q in [[0.1, 0.1], [1.5, 2.0], [3.0, 0.0]] {
            let (da, db) = (sa.decision_values(&q).unwrap()[0], sb.decision_values(&q).unwrap()[0]);
            assert!((da + db).abs() < 1e-6, "{da} vs {db}");
        }
    }

    #[test]
    fn one_class_rejected() {
        let t = LabeledVectors::new(vec![0.0, 1.0], 1, vec![3, 3]).unwrap();
        assert!(matches!(Svm::fit(&t, KernelSpec::linear(), &SvmOptions::default()), Err(Error::Data(_))));
    }
}
