use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Normalization, Provenance, Split, NUM_CLASSES};
use crate::autograd::Tensor;
use crate::{Error, Result};

/// Gaussian class blobs in a low-dimensional latent space, rendered as images.
///
/// Each latent coordinate drives one smooth colour pattern, defined on a grid a
/// quarter of the image side and upsampled by pixel replication. The patterns
/// are orthonormal, so image-space distances are latent distances up to a
/// constant factor, plus independent pixel noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    pub classes: usize,
    pub per_class: usize,
    /// Approximate distance between class centres, in latent standard deviations.
    pub separation: f64,
    pub seed: u64,
    pub test_per_class: usize,
    pub latent_dim: usize,
    /// Per-pixel noise standard deviation, relative to the latent signal.
    pub pixel_noise: f64,
    pub image_size: usize,
}

impl SyntheticOptions {
    pub fn new(classes: usize, per_class: usize, separation: f64, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            separation,
            seed,
            test_per_class: per_class,
            latent_dim: 16,
            pixel_noise: 0.5,
            image_size: 32,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.separation > 0.0) {
            return Err(Error::Config(format!("separation {} must be positive", self.separation)));
        }
        if self.classes < 1 || self.classes > NUM_CLASSES {
            return Err(Error::Config(format!("classes {} must lie in 1..=10", self.classes)));
        }
        if self.per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("per-class count must be positive".into()));
        }
        let grid = self.image_size / 4;
        if self.image_size == 0 || self.image_size % 4 != 0 || self.latent_dim == 0 || self.latent_dim > 3 * grid * grid {
            return Err(Error::Config(format!(
                "latent dimension {} does not fit {}x{} images",
                self.latent_dim, self.image_size, self.image_size
            )));
        }
        if !(self.pixel_noise >= 0.0) {
            return Err(Error::Config("pixel noise must be nonnegative".into()));
        }
        Ok(())
    }

    /// Train and test splits sharing class centres and patterns; normalization is
    /// fitted on train.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let mut structure = ChaCha8Rng::seed_from_u64(self.seed);
        let patterns = orthonormal_patterns(self.latent_dim, 3 * (self.image_size / 4).pow(2), &mut structure);
        let centres: Vec<Vec<f64>> = (0..self.classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.latent_dim).map(|_| StandardNormal.sample(&mut structure)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / norm * self.separation / 2f64.sqrt()).collect()
            })
            .collect();
        let mut train_rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7472_6169_6e00_0000);
        let mut test_rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x7465_7374_0000_0000);
        let (mut train_x, train_y) = self.render(&patterns, &centres, self.per_class, &mut train_rng)?;
        let (mut test_x, test_y) = self.render(&patterns, &centres, self.test_per_class, &mut test_rng)?;
        let norm = Normalization::fit(&train_x);
        norm.apply(&mut train_x);
        norm.apply(&mut test_x);
        Ok((
            Dataset::new(train_x, train_y, Split::Train, Provenance::Synthetic, norm.clone())?,
            Dataset::new(test_x, test_y, Split::Test, Provenance::Synthetic, norm)?,
        ))
    }

    fn render(
        &self,
        patterns: &[Vec<f64>],
        centres: &[Vec<f64>],
        per_class: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor, Vec<usize>)> {
        let side = self.image_size;
        let grid = side / 4;
        let small = 3 * grid * grid;
        let gain = (small as f64 / self.latent_dim as f64).sqrt();
        let n = self.classes * per_class;
        let mut data = Vec::with_capacity(n * 3 * side * side);
        let mut labels = Vec::with_capacity(n);
        let mut coarse = vec![0.0; small];
        for i in 0..n {
            let class = i % self.classes;
            labels.push(class);
            coarse.fill(0.0);
            for (c, p) in centres[class].iter().zip(patterns) {
                let noise: f64 = StandardNormal.sample(rng);
                let z = c + noise;
                coarse.iter_mut().zip(p).for_each(|(o, v)| *o += gain * z * v);
            }
            for ch in 0..3 {
                for y in 0..side {
                    for x in 0..side {
                        let base = coarse[ch * grid * grid + (y / 4) * grid + x / 4];
                        let noise: f64 = StandardNormal.sample(rng);
                        data.push(base + self.pixel_noise * noise);
                    }
                }
            }
        }
        Ok((Tensor::from_vec(vec![n, 3, side, side], data)?, labels))
    }
}

/// `count` orthonormal vectors of length `dim` by Gram-Schmidt on Gaussian draws.
fn orthonormal_patterns(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Training split of a synthetic blob dataset with default rendering options.
pub fn make_synthetic(classes: usize, per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    Ok(SyntheticOptions::new(classes, per_class, separation, seed).generate()?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = make_synthetic(3, 4, 2.0, 9).unwrap();
        let b = make_synthetic(3, 4, 2.0, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_synthetic(3, 4, 2.0, 10).unwrap());
        assert_eq!(a.images().shape(), &[12, 3, 32, 32]);
    }

    #[test]
    fn invalid_options() {
        assert!(matches!(make_synthetic(2, 0, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(make_synthetic(2, 5, 0.0, 0), Err(Error::Config(_))));
        assert!(matches!(make_synthetic(2, 5, -1.0, 0), Err(Error::Config(_))));
        assert!(matches!(make_synthetic(11, 5, 1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn patterns_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = orthonormal_patterns(5, 12, &mut rng);
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = p[i].iter().zip(&p[j]).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
