//! Four-convolution, one-linear-layer image classifier.
//!
//! ```text
//! conv3x3(3->w1) relu conv3x3(w1->w2) relu avgpool2
//! conv3x3(w2->w3) relu conv3x3(w3->w4) relu avgpool2
//! flatten linear(->classes)
//! ```
//!
//! All convolutions use stride 1 and padding 1. Parameters live in one flat
//! vector so optimizers and clipping can treat them as a single array.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::{self, PerSampleGrads, Tape, Tensor, Var};
use crate::error::shape_err;
use crate::{Error, Result};

/// Images per forward chunk during evaluation.
const EVAL_CHUNK: usize = 128;
const CHECKPOINT_MAGIC: &str = "dpkit-convnet 1";

/// Channel widths of the four convolutions plus input geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthConfig {
    pub channels: [usize; 4],
    pub in_channels: usize,
    /// Side length of the square input; must be divisible by 4.
    pub image_size: usize,
    pub classes: usize,
}

impl Default for WidthConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128, 128],
            in_channels: 3,
            image_size: 32,
            classes: 10,
        }
    }
}

impl WidthConfig {
    pub fn with_channels(channels: [usize; 4]) -> Self {
        Self {
            channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.in_channels == 0 || self.classes == 0 {
            return Err(Error::Config(format!("widths must be positive: {self:?}")));
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of 4",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Named parameter tensors in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let [c1, c2, c3, c4] = self.channels;
        let side = self.image_size / 4;
        vec![
            ("conv1.weight", vec![c1, self.in_channels, 3, 3]),
            ("conv1.bias", vec![c1]),
            ("conv2.weight", vec![c2, c1, 3, 3]),
            ("conv2.bias", vec![c2]),
            ("conv3.weight", vec![c3, c2, 3, 3]),
            ("conv3.bias", vec![c3]),
            ("conv4.weight", vec![c4, c3, 3, 3]),
            ("conv4.bias", vec![c4]),
            ("fc.weight", vec![self.classes, c4 * side * side]),
            ("fc.bias", vec![self.classes]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// A model trainable by the noisy optimizer.
pub trait Model: Sync {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Logits `[B, classes]`.
    fn logits(&self, images: &Tensor) -> Result<Tensor>;
    /// Per-example gradients of the cross-entropy loss, and the losses themselves.
    fn per_sample_grads(&self, images: &Tensor, labels: &[usize]) -> Result<(PerSampleGrads, Vec<f64>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    config: WidthConfig,
    params: Vec<f64>,
}

impl ConvNet {
    /// Kaiming-uniform initialization: weights `U(-b, b)` with `b = sqrt(6 / fan_in)`,
    /// biases zero.
    pub fn init(seed: u64, config: WidthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(config.param_count());
        for (name, shape) in config.layout() {
            let n: usize = shape.iter().product();
            if name.ends_with("bias") {
                params.extend(std::iter::repeat_n(0.0, n));
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                params.extend(dist.sample_iter(&mut rng).take(n));
            }
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: WidthConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(shape_err(format!(
                "{} parameters given, configuration needs {}",
                params.len(),
                config.param_count()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &WidthConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameter tensors in layout order.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut offset = 0;
        self.config
            .layout()
            .into_iter()
            .map(|(_, shape)| {
                let n: usize = shape.iter().product();
                let t = Tensor::from_parts(shape, self.params[offset..offset + n].to_vec());
                offset += n;
                t
            })
            .collect()
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let c = &self.config;
        match images.shape() {
            [_, ch, h, w] if *ch == c.in_channels && *h == c.image_size && *w == c.image_size => Ok(()),
            other => Err(shape_err(format!(
                "expected [B,{},{},{}] images, got {other:?}",
                c.in_channels, c.image_size, c.image_size
            ))),
        }
    }

    /// Records the forward pass; returns the parameter vars and the logits var.
    pub fn record(&self, tape: &mut Tape, images: Var) -> Result<(Vec<Var>, Var)> {
        let p: Vec<Var> = self.tensors().into_iter().map(|t| tape.param(t)).collect();
        let mut h = images;
        for layer in 0..4 {
            h = tape.conv2d(h, p[2 * layer], Some(p[2 * layer + 1]), 1, 1)?;
            h = tape.relu(h);
            if layer % 2 == 1 {
                h = tape.avgpool2d(h, 2)?;
            }
        }
        let flat = tape.flatten(h)?;
        let logits = tape.linear(flat, p[8], Some(p[9]))?;
        Ok((p, logits))
    }

    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        self.check_input(images)?;
        let t = self.tensors();
        let mut h = images.clone();
        for layer in 0..4 {
            h = autograd::relu(&autograd::conv2d(&h, &t[2 * layer], Some(&t[2 * layer + 1]), 1, 1)?);
            if layer % 2 == 1 {
                h = autograd::avgpool2d(&h, 2)?;
            }
        }
        let batch = h.shape()[0];
        let flat = h.reshape(vec![batch, t[8].shape()[1]])?;
        autograd::linear(&flat, &t[8], Some(&t[9]))
    }

    /// Gradient of one example's loss.
    fn example_grad(&self, image: Tensor, label: usize) -> Result<(Vec<f64>, f64)> {
        let mut tape = Tape::new();
        let x = tape.constant(image);
        let (params, logits) = self.record(&mut tape, x)?;
        let loss = tape.cross_entropy(logits, &[label])?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok((grads.flatten(&params, &tape), value))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(std::fs::File::open(path)?))
    }

    /// Text header, one `tensor` line per parameter, `end`, then little-endian `f64` values.
    ///
    /// ```text
    /// dpkit-convnet 1
    /// channels 32 64 128 128
    /// input 3 32
    /// classes 10
    /// tensor conv1.weight 32 3 3 3
    /// ...
    /// end
    /// ```
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        let c = &self.config;
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(
            out,
            "channels {} {} {} {}",
            c.channels[0], c.channels[1], c.channels[2], c.channels[3]
        )?;
        writeln!(out, "input {} {}", c.in_channels, c.image_size)?;
        writeln!(out, "classes {}", c.classes)?;
        for (name, shape) in c.layout() {
            let dims: Vec<String> = shape.iter().map(ToString::to_string).collect();
            writeln!(out, "tensor {name} {}", dims.join(" "))?;
        }
        writeln!(out, "end")?;
        for v in &self.params {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(Error::Data("checkpoint header ends early".into()));
            }
            Ok(line.trim_end().to_string())
        };
        if next_line(&mut input)? != CHECKPOINT_MAGIC {
            return Err(Error::Data("not a dpkit convnet checkpoint".into()));
        }
        let nums = |text: String, key: &str, count: usize| -> Result<Vec<usize>> {
            let mut parts = text.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::Data(format!("expected `{key}` line, got `{text}`")));
            }
            let values: Vec<usize> = parts
                .map(|p| p.parse().map_err(|_| Error::Data(format!("bad number `{p}` in `{text}`"))))
                .collect::<Result<_>>()?;
            if values.len() != count {
                return Err(Error::Data(format!("`{key}` needs {count} values")));
            }
            Ok(values)
        };
        let ch = nums(next_line(&mut input)?, "channels", 4)?;
        let inp = nums(next_line(&mut input)?, "input", 2)?;
        let classes = nums(next_line(&mut input)?, "classes", 1)?[0];
        let config = WidthConfig {
            channels: [ch[0], ch[1], ch[2], ch[3]],
            in_channels: inp[0],
            image_size: inp[1],
            classes,
        };
        config.validate()?;
        for (name, shape) in config.layout() {
            let text = next_line(&mut input)?;
            let mut parts = text.split_whitespace();
            let ok = parts.next() == Some("tensor")
                && parts.next() == Some(name)
                && parts.map(|p| p.parse::<usize>().ok()).collect::<Vec<_>>()
                    == shape.iter().map(|&d| Some(d)).collect::<Vec<_>>();
            if !ok {
                return Err(Error::Data(format!("tensor line `{text}` does not match {name} {shape:?}")));
            }
        }
        if next_line(&mut input)? != "end" {
            return Err(Error::Data("missing `end` after tensor manifest".into()));
        }
        let n = config.param_count();
        let mut bytes = Vec::with_capacity(n * 8);
        input.read_to_end(&mut bytes)?;
        if bytes.len() != n * 8 {
            return Err(Error::Data(format!("payload has {} bytes, expected {}", bytes.len(), n * 8)));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_params(config, params)
    }
}

impl Model for ConvNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        self.check_input(images)?;
        let batch = images.shape()[0];
        if batch <= EVAL_CHUNK {
            return self.forward(images);
        }
        let chunks: Vec<Tensor> = (0..batch)
            .step_by(EVAL_CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| self.forward(&images.slice_outer(start, EVAL_CHUNK.min(batch - start))?))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(batch * self.config.classes);
        for c in chunks {
            data.extend(c.into_data());
        }
        Ok(Tensor::from_parts(vec![batch, self.config.classes], data))
    }

    fn per_sample_grads(&self, images: &Tensor, labels: &[usize]) -> Result<(PerSampleGrads, Vec<f64>)> {
        self.check_input(images)?;
        let batch = images.shape()[0];
        if labels.len() != batch {
            return Err(shape_err(format!("{} labels for {batch} images", labels.len())));
        }
        let results: Vec<(Vec<f64>, f64)> = (0..batch)
            .into_par_iter()
            .map(|i| self.example_grad(images.slice_outer(i, 1)?, labels[i]))
            .collect::<Result<_>>()?;
        let mut grads = PerSampleGrads::with_capacity(batch, self.params.len());
        let mut losses = Vec::with_capacity(batch);
        for (row, loss) in results {
            grads.push_row(&row)?;
            losses.push(loss);
        }
        Ok((grads, losses))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> WidthConfig {
        WidthConfig {
            channels: [2, 3, 2, 2],
            in_channels: 3,
            image_size: 8,
            classes: 4,
        }
    }

    fn images(batch: usize, config: &WidthConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = batch * config.in_channels * config.image_size * config.image_size;
        Tensor::new(
            vec![batch, config.in_channels, config.image_size, config.image_size],
            (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_param_count() {
        let expected = (32 * 3 * 9 + 32) + (64 * 32 * 9 + 64) + (128 * 64 * 9 + 128) + (128 * 128 * 9 + 128) + (10 * 128 * 64 + 10);
        assert_eq!(WidthConfig::default().param_count(), expected);
        let net = ConvNet::init(0, WidthConfig::default()).unwrap();
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn init_is_deterministic() {
        let a = ConvNet::init(42, tiny()).unwrap();
        let b = ConvNet::init(42, tiny()).unwrap();
        let c = ConvNet::init(43, tiny()).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(matches!(
            ConvNet::init(0, WidthConfig::with_channels([0, 1, 1, 1])),
            Err(Error::Config(_))
        ));
        let odd = WidthConfig {
            image_size: 30,
            ..WidthConfig::default()
        };
        assert!(matches!(ConvNet::init(0, odd), Err(Error::Config(_))));
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_logits() {
        let cfg = tiny();
        let net = ConvNet::init(1, cfg).unwrap();
        let z = net.forward(&Tensor::zeros(&[2, 3, 8, 8])).unwrap();
        assert_eq!(z.shape(), &[2, 4]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_shape_rejected() {
        let net = ConvNet::init(1, tiny()).unwrap();
        assert!(matches!(net.forward(&Tensor::zeros(&[1, 3, 16, 16])), Err(Error::Shape(_))));
        assert!(matches!(net.forward(&Tensor::zeros(&[1, 1, 8, 8])), Err(Error::Shape(_))));
    }

    #[test]
    fn permuting_batch_permutes_logits() {
        let cfg = tiny();
        let net = ConvNet::init(3, cfg).unwrap();
        let x = images(4, &cfg, 9);
        let z = net.forward(&x).unwrap();
        let perm = [2, 0, 3, 1];
        let zp = net.forward(&x.gather_outer(&perm).unwrap()).unwrap();
        assert_eq!(zp, z.gather_outer(&perm).unwrap());
        assert!(z.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn duplicated_images_duplicate_logits() {
        let cfg = tiny();
        let net = ConvNet::init(3, cfg).unwrap();
        let x = images(1, &cfg, 5).gather_outer(&[0, 0, 0]).unwrap();
        let z = net.forward(&x).unwrap();
        assert_eq!(z.slice_outer(0, 1).unwrap().data(), z.slice_outer(2, 1).unwrap().data());
    }

    #[test]
    fn chunked_logits_match_forward() {
        let cfg = tiny();
        let net = ConvNet::init(4, cfg).unwrap();
        let x = images(EVAL_CHUNK + 7, &cfg, 6);
        assert_eq!(net.logits(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn per_sample_rows_match_batched_tape() {
        let cfg = tiny();
        let net = ConvNet::init(5, cfg).unwrap();
        let x = images(3, &cfg, 7);
        let labels = [0, 3, 1];
        let (rows, losses) = net.per_sample_grads(&x, &labels).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (params, logits) = net.record(&mut tape, xv).unwrap();
        let per = tape.cross_entropy(logits, &labels).unwrap();
        let batched = tape.per_sample_backward(per, &params).unwrap();
        for i in 0..3 {
            for (a, b) in rows.row(i).iter().zip(batched.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((losses[i] - tape.value(per).data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = ConvNet::init(11, tiny()).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let back = ConvNet::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, net);
        buf.pop();
        assert!(matches!(ConvNet::read_checkpoint(&buf[..]), Err(Error::Data(_))));
        assert!(ConvNet::read_checkpoint(&b"garbage\n"[..]).is_err());
    }
}
