//! Differentially private learning toolkit.
//!
//! The crate bundles everything needed to run noisy-gradient training
//! experiments on small image classifiers:
//!
//! * [`accountant`]: privacy accounting for the Poisson-subsampled Gaussian
//!   mechanism and noise-multiplier calibration.
//! * [`autograd`]: a dense `f64` tensor type with a reverse-mode tape and
//!   per-example gradients.
//! * [`convnet`]: a four-convolution, one-linear-layer image classifier.
//! * [`dp`]: per-example clipping, Gaussian aggregation noise, optimizers and
//!   the training loop.
//! * [`mechanisms`]: the Laplace input-perturbation mechanism.
//! * [`classical`]: k-NN, Gaussian naive Bayes and kernel SVM baselines.
//! * [`data`]: CIFAR-10 ingestion, synthetic data, the dataset container and
//!   Poisson batch sampling.
//! * [`harness`]: experiment grids, CSV metrics and SVG reports.

pub mod accountant;
pub mod autograd;
pub mod classical;
pub mod convnet;
pub mod data;
pub mod dp;
mod error;
pub mod harness;
pub mod mechanisms;

pub use error::{Error, ErrorKind, Result};
