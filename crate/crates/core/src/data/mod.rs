//! Image datasets: CIFAR-10 ingestion, synthetic blobs, the on-disk container
//! format and Poisson batch sampling.

mod cifar;
mod container;
mod synthetic;

pub use cifar::{load_cifar10, load_cifar10_files, parse_cifar_records, CIFAR_RECORD_BYTES};
pub use container::{read_dataset, write_dataset};
pub use synthetic::{make_synthetic, SyntheticOptions};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::error::shape_err;
use crate::{Error, Result};

/// Number of label classes every dataset draws from.
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Cifar10,
    Synthetic,
    Perturbed,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Cifar10 => "cifar10",
            Provenance::Synthetic => "synthetic",
            Provenance::Perturbed => "perturbed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cifar10" => Some(Provenance::Cifar10),
            "synthetic" => Some(Provenance::Synthetic),
            "perturbed" => Some(Provenance::Perturbed),
            _ => None,
        }
    }
}

/// Per-channel statistics that were subtracted and divided out.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and population standard deviation per channel of `[N,C,H,W]` data.
    /// A channel with zero spread keeps a divisor of 1.
    pub fn fit(images: &Tensor) -> Self {
        let shape = images.shape();
        let (channels, plane) = (shape[1], shape[2] * shape[3]);
        let mut sum = vec![0.0; channels];
        let mut count = vec![0usize; channels];
        for (i, chunk) in images.data().chunks(plane).enumerate() {
            sum[i % channels] += chunk.iter().sum::<f64>();
            count[i % channels] += chunk.len();
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        let mut sq = vec![0.0; channels];
        for (i, chunk) in images.data().chunks(plane).enumerate() {
            let m = mean[i % channels];
            sq[i % channels] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        let std = sq
            .iter()
            .zip(&count)
            .map(|(s, &n)| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    /// Applies `(x - mean) / std` channel-wise in place.
    pub fn apply(&self, images: &mut Tensor) {
        let shape = images.shape().to_vec();
        let (channels, plane) = (shape[1], shape[2] * shape[3]);
        for (i, chunk) in images.data_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[i % channels], self.std[i % channels]);
            chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
}

/// Labelled `[N,C,H,W]` images.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    pub split: Split,
    pub provenance: Provenance,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        split: Split,
        provenance: Provenance,
        normalization: Normalization,
    ) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(shape_err(format!("images must be [N,C,H,W], got {shape:?}")));
        }
        if labels.len() != shape[0] {
            return Err(shape_err(format!("{} labels for {} images", labels.len(), shape[0])));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Label {
                label,
                classes: NUM_CLASSES,
            });
        }
        if normalization.mean.len() != shape[1] || normalization.std.len() != shape[1] {
            return Err(shape_err("normalization stats must have one entry per channel"));
        }
        Ok(Self {
            images,
            labels,
            split,
            provenance,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `[C,H,W]` of one image.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Images and labels at `indices`, in order.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images = self.images.gather_outer(indices)?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Data(format!("cannot take {n} of {} examples", self.len())));
        }
        Ok(Self {
            images: self.images.slice_outer(0, n)?,
            labels: self.labels[..n].to_vec(),
            ..self.clone_meta()
        })
    }

    /// The same dataset with different pixel values.
    pub fn with_images(&self, images: Tensor, provenance: Provenance) -> Result<Self> {
        if images.shape() != self.images.shape() {
            return Err(shape_err(format!(
                "replacement images {:?} differ from {:?}",
                images.shape(),
                self.images.shape()
            )));
        }
        Ok(Self {
            images,
            labels: self.labels.clone(),
            provenance,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            images: Tensor::scalar(0.0),
            labels: Vec::new(),
            split: self.split,
            provenance: self.provenance,
            normalization: self.normalization.clone(),
        }
    }
}

/// Independent inclusion of each index with probability `rate` on every draw.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    rate: f64,
    size: usize,
    rng: ChaCha8Rng,
}

impl PoissonSampler {
    pub fn new(rate: f64, size: usize, seed: u64) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::InvalidRate(rate));
        }
        Ok(Self {
            rate,
            size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn expected_batch(&self) -> f64 {
        self.rate * self.size as f64
    }

    /// One draw; may be empty.
    pub fn sample(&mut self) -> Vec<usize> {
        if self.rate >= 1.0 {
            return (0..self.size).collect();
        }
        (0..self.size).filter(|_| self.rng.random::<f64>() < self.rate).collect()
    }
}

/// `steps` independent draws.
pub fn poisson_batches(sampler: &mut PoissonSampler, steps: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
    (0..steps).map(move |_| sampler.sample())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rate_takes_everything() {
        let mut s = PoissonSampler::new(1.0, 17, 0).unwrap();
        for batch in poisson_batches(&mut s, 3) {
            assert_eq!(batch, (0..17).collect::<Vec<_>>());
        }
    }

    #[test]
    fn mean_batch_size() {
        let mut s = PoissonSampler::new(0.5, 10_000, 1).unwrap();
        let total: usize = poisson_batches(&mut s, 1000).map(|b| b.len()).sum();
        let mean = total as f64 / 1000.0;
        assert!((mean - 5000.0).abs() < 50.0, "{mean}");
    }

    #[test]
    fn seeds_give_different_sequences() {
        let mut a = PoissonSampler::new(0.1, 200, 1).unwrap();
        let mut b = PoissonSampler::new(0.1, 200, 2).unwrap();
        let xa: Vec<_> = poisson_batches(&mut a, 5).collect();
        let xb: Vec<_> = poisson_batches(&mut b, 5).collect();
        assert_ne!(xa, xb);
        assert!(PoissonSampler::new(0.0, 10, 0).is_err());
        assert!(PoissonSampler::new(1.5, 10, 0).is_err());
    }

    #[test]
    fn normalization_fit_and_apply() {
        let mut t = Tensor::new(vec![2, 2, 1, 2], vec![1.0, 3.0, 5.0, 5.0, 3.0, 5.0, 5.0, 5.0]).unwrap();
        let n = Normalization::fit(&t);
        assert_eq!(n.mean, vec![3.0, 5.0]);
        assert!((n.std[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(n.std[1], 1.0);
        n.apply(&mut t);
        let after = Normalization::fit(&t);
        assert!(after.mean.iter().all(|m| m.abs() < 1e-15));
    }

    #[test]
    fn dataset_validation() {
        let imgs = Tensor::zeros(&[2, 1, 2, 2]);
        let norm = Normalization::identity(1);
        assert!(Dataset::new(imgs.clone(), vec![0], Split::Train, Provenance::Synthetic, norm.clone()).is_err());
        assert!(matches!(
            Dataset::new(imgs.clone(), vec![0, 10], Split::Train, Provenance::Synthetic, norm.clone()),
            Err(Error::Label { .. })
        ));
        let d = Dataset::new(imgs, vec![0, 9], Split::Train, Provenance::Synthetic, norm).unwrap();
        assert_eq!(d.head(1).unwrap().labels(), &[0]);
        assert!(d.head(3).is_err());
        let (x, y) = d.batch(&[1, 1]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 2, 2]);
        assert_eq!(y, vec![9, 9]);
    }
}
