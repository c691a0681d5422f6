use std::fmt;
use std::str::FromStr;

use crate::error::shape_err;
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_DECAY: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;
pub const ADAGRAD_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Optimizer {
    Sgd,
    Adam,
    RmsProp,
    Adagrad,
}

impl Optimizer {
    pub const ALL: [Optimizer; 4] = [Optimizer::Sgd, Optimizer::Adam, Optimizer::RmsProp, Optimizer::Adagrad];

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
            Optimizer::RmsProp => "rmsprop",
            Optimizer::Adagrad => "adagrad",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            "rmsprop" => Ok(Optimizer::RmsProp),
            "adagrad" => Ok(Optimizer::Adagrad),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Moment accumulators for one optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: Optimizer,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, params: usize) -> Self {
        let first = if kind == Optimizer::Adam { vec![0.0; params] } else { Vec::new() };
        let second = if kind == Optimizer::Sgd { Vec::new() } else { vec![0.0; params] };
        Self {
            kind,
            first,
            second,
            steps: 0,
        }
    }

    pub fn kind(&self) -> Optimizer {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update of `grad` to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != grad.len() {
            return Err(shape_err(format!(
                "gradient has {} entries for {} parameters",
                grad.len(),
                params.len()
            )));
        }
        if self.kind != Optimizer::Sgd && self.second.len() != params.len() {
            return Err(shape_err(format!(
                "optimizer state sized for {} parameters, got {}",
                self.second.len(),
                params.len()
            )));
        }
        self.steps += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = ADAM_BETA1 * self.first[i] + (1.0 - ADAM_BETA1) * g;
                    self.second[i] = ADAM_BETA2 * self.second[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] -= lr * m / (v.sqrt() + ADAM_EPS);
                }
            }
            Optimizer::RmsProp => {
                for i in 0..params.len() {
                    let g = grad[i];
                    self.second[i] = RMSPROP_DECAY * self.second[i] + (1.0 - RMSPROP_DECAY) * g * g;
                    params[i] -= lr * g / (self.second[i].sqrt() + RMSPROP_EPS);
                }
            }
            Optimizer::Adagrad => {
                for i in 0..params.len() {
                    let g = grad[i];
                    self.second[i] += g * g;
                    params[i] -= lr * g / (self.second[i].sqrt() + ADAGRAD_EPS);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut s = OptimizerState::new(Optimizer::Sgd, 1);
        let mut p = [0.0];
        s.step(&mut p, &[1.0], 0.1).unwrap();
        assert_eq!(p, [-0.1]);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = OptimizerState::new(Optimizer::Adam, 2);
        let mut p = [1.0, -1.0];
        s.step(&mut p, &[1.0, 1.0], 0.01).unwrap();
        let want = 1.0 - 0.01 / (1.0 + ADAM_EPS);
        assert!((p[0] - want).abs() < 1e-15);
        assert!((p[1] - (-1.0 - 0.01 / (1.0 + ADAM_EPS))).abs() < 1e-15);
    }

    #[test]
    fn adagrad_zero_gradient_never_moves() {
        let mut s = OptimizerState::new(Optimizer::Adagrad, 3);
        let mut p = [0.5, -2.0, 3.0];
        for _ in 0..100 {
            s.step(&mut p, &[0.0; 3], 1.0).unwrap();
        }
        assert_eq!(p, [0.5, -2.0, 3.0]);
        assert_eq!(s.steps(), 100);
    }

    #[test]
    fn rmsprop_first_step() {
        let mut s = OptimizerState::new(Optimizer::RmsProp, 1);
        let mut p = [0.0];
        s.step(&mut p, &[2.0], 0.1).unwrap();
        let v: f64 = 0.01 * 4.0;
        assert!((p[0] + 0.1 * 2.0 / (v.sqrt() + RMSPROP_EPS)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = OptimizerState::new(Optimizer::Adam, 2);
        assert!(matches!(s.step(&mut [0.0; 3], &[0.0; 3], 0.1), Err(Error::Shape(_))));
        let mut sgd = OptimizerState::new(Optimizer::Sgd, 2);
        assert!(sgd.step(&mut [0.0; 2], &[0.0; 1], 0.1).is_err());
        assert_eq!(sgd.steps(), 0);
    }

    #[test]
    fn parse_names() {
        for o in Optimizer::ALL {
            assert_eq!(o.name().parse::<Optimizer>().unwrap(), o);
        }
        assert_eq!("RMSProp".parse::<Optimizer>().unwrap(), Optimizer::RmsProp);
        assert!("lbfgs".parse::<Optimizer>().is_err());
    }
}
