//! Experiment specifications and the flat `key = value` config format.
//!
//! ```text
//! optimizer = adam
//! batch_size = 256
//! epsilon = 5
//! delta = 1e-5
//! clip_norm = 1
//! learning_rate = 1e-3
//! epochs = 100
//! noise_multiplier = 0.91   # optional; calibrated when absent
//! model = convnet           # or convnet-8-16-16-16 for explicit widths
//! seed = 0
//! runs = 3
//! dataset = cifar10         # or synthetic
//! subset_size = 5000
//! ```

use std::fmt::Write as _;

use crate::convnet::WidthConfig;
use crate::dp::{DpTrainConfig, Optimizer};
use crate::{Error, Result};

/// Training images used for CIFAR-10 runs unless configured otherwise.
pub const DEFAULT_CIFAR_SUBSET: usize = 5000;
/// Training images in the default synthetic benchmark.
pub const DEFAULT_SYNTHETIC_SIZE: usize = 600;

pub const CONFIG_KEYS: [&str; 13] = [
    "optimizer",
    "batch_size",
    "epsilon",
    "delta",
    "clip_norm",
    "learning_rate",
    "epochs",
    "noise_multiplier",
    "model",
    "seed",
    "runs",
    "dataset",
    "subset_size",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    ConvNet(WidthConfig),
}

impl ModelSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "convnet" {
            return Ok(ModelSpec::ConvNet(WidthConfig::default()));
        }
        if let Some(rest) = s.strip_prefix("convnet-") {
            let w: Vec<usize> = rest
                .split('-')
                .map(|p| p.parse().map_err(|_| Error::Config(format!("bad width `{p}` in `{s}`"))))
                .collect::<Result<_>>()?;
            if let [a, b, c, d] = w[..] {
                let cfg = WidthConfig::with_channels([a, b, c, d]);
                cfg.validate()?;
                return Ok(ModelSpec::ConvNet(cfg));
            }
        }
        Err(Error::Config(format!("unknown model `{s}`")))
    }

    pub fn name(&self) -> String {
        match self {
            ModelSpec::ConvNet(cfg) if cfg.channels == WidthConfig::default().channels => "convnet".into(),
            ModelSpec::ConvNet(cfg) => {
                let [a, b, c, d] = cfg.channels;
                format!("convnet-{a}-{b}-{c}-{d}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSpec {
    /// The first `train_size` training records and the full test set.
    Cifar10 { train_size: usize },
    /// Synthetic blobs with `train_size` training images.
    Synthetic { train_size: usize },
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Cifar10 { .. } => "cifar10",
            DatasetSpec::Synthetic { .. } => "synthetic",
        }
    }

    pub fn train_size(&self) -> usize {
        match *self {
            DatasetSpec::Cifar10 { train_size } | DatasetSpec::Synthetic { train_size } => train_size,
        }
    }

    fn with_size(self, train_size: usize) -> Self {
        match self {
            DatasetSpec::Cifar10 { .. } => DatasetSpec::Cifar10 { train_size },
            DatasetSpec::Synthetic { .. } => DatasetSpec::Synthetic { train_size },
        }
    }
}

/// One named experiment: a training configuration run `config.runs` times.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub id: String,
    pub config: DpTrainConfig,
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
}

impl ExperimentSpec {
    pub fn new(id: impl Into<String>, config: DpTrainConfig) -> Self {
        Self {
            id: id.into(),
            config,
            model: ModelSpec::ConvNet(WidthConfig::default()),
            dataset: DatasetSpec::Cifar10 {
                train_size: DEFAULT_CIFAR_SUBSET,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains([',', '"', '\n']) {
            return Err(Error::Config(format!("experiment id `{}` is empty or not CSV-safe", self.id)));
        }
        if self.dataset.train_size() == 0 {
            return Err(Error::Config("subset_size must be positive".into()));
        }
        self.config.validate()
    }

    /// Parses a config file body. Blank lines and `#` comments are ignored.
    pub fn parse(id: &str, text: &str) -> Result<Self> {
        let mut spec = Self::new(id, DpTrainConfig::default());
        let mut dataset_kind = "cifar10".to_string();
        let mut subset: Option<usize> = None;
        let mut seen = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx as u64 + 1;
            let err = |reason: String| Error::Parse { line: line_no, reason };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            if !CONFIG_KEYS.contains(&key) {
                return Err(err(format!("unknown key `{key}`")));
            }
            if seen.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(key);
            let num = |v: &str| -> Result<f64> { v.parse().map_err(|_| err(format!("`{key}` needs a number, got `{v}`"))) };
            let int = |v: &str| -> Result<u64> {
                v.parse()
                    .map_err(|_| err(format!("`{key}` needs a nonnegative integer, got `{v}`")))
            };
            let c = &mut spec.config;
            match key {
                "optimizer" => c.optimizer = value.parse::<Optimizer>().map_err(|e| err(e.to_string()))?,
                "batch_size" => c.batch_size = int(value)? as usize,
                "epsilon" => c.epsilon = num(value)?,
                "delta" => c.delta = num(value)?,
                "clip_norm" => c.clip_norm = num(value)?,
                "learning_rate" => c.learning_rate = num(value)?,
                "epochs" => c.epochs = int(value)? as usize,
                "noise_multiplier" => {
                    c.noise_multiplier = match value {
                        "" | "auto" => None,
                        v => Some(num(v)?),
                    }
                }
                "model" => spec.model = ModelSpec::parse(value).map_err(|e| err(e.to_string()))?,
                "seed" => c.seed = int(value)?,
                "runs" => c.runs = int(value)? as usize,
                "dataset" => {
                    if value != "cifar10" && value != "synthetic" {
                        return Err(err(format!("unknown dataset `{value}`")));
                    }
                    dataset_kind = value.to_string();
                }
                "subset_size" => subset = Some(int(value)? as usize),
                _ => unreachable!("key checked above"),
            }
        }
        spec.dataset = if dataset_kind == "synthetic" {
            DatasetSpec::Synthetic {
                train_size: subset.unwrap_or(DEFAULT_SYNTHETIC_SIZE),
            }
        } else {
            DatasetSpec::Cifar10 {
                train_size: subset.unwrap_or(DEFAULT_CIFAR_SUBSET),
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Renders the spec in the config format; `parse` reads it back unchanged.
    pub fn to_config(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "optimizer = {}", c.optimizer);
        let _ = writeln!(out, "batch_size = {}", c.batch_size);
        let _ = writeln!(out, "epsilon = {:?}", c.epsilon);
        let _ = writeln!(out, "delta = {:?}", c.delta);
        let _ = writeln!(out, "clip_norm = {:?}", c.clip_norm);
        let _ = writeln!(out, "learning_rate = {:?}", c.learning_rate);
        let _ = writeln!(out, "epochs = {}", c.epochs);
        match c.noise_multiplier {
            Some(s) => {
                let _ = writeln!(out, "noise_multiplier = {s:?}");
            }
            None => {
                let _ = writeln!(out, "noise_multiplier = auto");
            }
        }
        let _ = writeln!(out, "model = {}", self.model.name());
        let _ = writeln!(out, "seed = {}", c.seed);
        let _ = writeln!(out, "runs = {}", c.runs);
        let _ = writeln!(out, "dataset = {}", self.dataset.name());
        let _ = writeln!(out, "subset_size = {}", self.dataset.train_size());
        out
    }

    /// Same experiment on a different dataset size.
    pub fn with_train_size(mut self, train_size: usize) -> Self {
        self.dataset = self.dataset.with_size(train_size);
        self
    }
}

/// `(optimizer, batch, epsilon, clip, lr, epochs, sigma, runs)` per row.
const TABLE1: [(Optimizer, usize, f64, f64, f64, usize, f64, usize); 20] = [
    (Optimizer::Sgd, 128, 20.0, 1.0, 1e-3, 50, 0.47, 1),
    (Optimizer::Adam, 128, 20.0, 1.0, 1e-3, 50, 0.47, 1),
    (Optimizer::Adam, 128, 5.0, 1.0, 1e-3, 50, 0.67, 1),
    (Optimizer::RmsProp, 128, 5.0, 1.0, 1e-3, 50, 0.67, 1),
    (Optimizer::Adam, 128, 5.0, 0.75, 1e-3, 50, 0.67, 1),
    (Optimizer::Adam, 128, 5.0, 0.5, 1e-3, 50, 0.67, 1),
    (Optimizer::Adam, 128, 2.5, 0.75, 1e-3, 50, 0.88, 1),
    (Optimizer::Adam, 256, 2.5, 0.75, 1e-3, 50, 1.07, 1),
    (Optimizer::Adam, 128, 5.0, 1.0, 1e-3, 100, 0.76, 3),
    (Optimizer::Adam, 256, 5.0, 1.0, 1e-3, 100, 0.91, 3),
    (Optimizer::Adam, 256, 5.0, 1.0, 1e-2, 100, 0.91, 3),
    (Optimizer::Adam, 128, 5.0, 1.0, 5e-4, 100, 0.76, 3),
    (Optimizer::Adam, 256, 5.0, 1.0, 5e-4, 100, 0.91, 3),
    (Optimizer::Adagrad, 256, 5.0, 1.0, 1e-4, 100, 0.91, 3),
    (Optimizer::Adam, 256, 5.0, 1.5, 5e-4, 100, 0.91, 3),
    (Optimizer::Adam, 256, 3.0, 2.5, 5e-4, 100, 1.21, 3),
    (Optimizer::Adam, 256, 5.0, 5.0, 5e-4, 100, 0.91, 3),
    (Optimizer::Adam, 256, 3.0, 5.0, 5e-4, 100, 1.21, 3),
    (Optimizer::Adam, 256, 1.0, 5.0, 5e-4, 100, 2.81, 3),
    (Optimizer::Adam, 128, 5.0, 1.0, 1e-3, 200, 0.91, 1),
];

/// Identifier of a preset row, `table1-01` through `table1-20`.
pub fn table1_id(row: usize) -> String {
    format!("table1-{row:02}")
}

/// The twenty reference configurations, each with its preset noise multiplier.
pub fn table1() -> Vec<ExperimentSpec> {
    TABLE1
        .iter()
        .enumerate()
        .map(|(i, &(optimizer, batch_size, epsilon, clip_norm, learning_rate, epochs, sigma, runs))| {
            ExperimentSpec::new(
                table1_id(i + 1),
                DpTrainConfig {
                    optimizer,
                    batch_size,
                    epsilon,
                    delta: 1e-5,
                    clip_norm,
                    learning_rate,
                    epochs,
                    noise_multiplier: Some(sigma),
                    seed: 0,
                    runs,
                },
            )
        })
        .collect()
}

/// Hyperparameter varied by a group of preset rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Epsilon,
    ClipNorm,
    Optimizer,
    BatchSize,
    LearningRate,
    Epochs,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Epsilon,
        AblationAxis::ClipNorm,
        AblationAxis::Optimizer,
        AblationAxis::BatchSize,
        AblationAxis::LearningRate,
        AblationAxis::Epochs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Epsilon => "epsilon",
            AblationAxis::ClipNorm => "clip_norm",
            AblationAxis::Optimizer => "optimizer",
            AblationAxis::BatchSize => "batch_size",
            AblationAxis::LearningRate => "learning_rate",
            AblationAxis::Epochs => "epochs",
        }
    }

    /// Preset rows (1-based) compared along this axis.
    pub fn rows(self) -> &'static [usize] {
        match self {
            AblationAxis::Epsilon => &[2, 17, 18, 19],
            AblationAxis::ClipNorm => &[13, 15, 16, 17],
            AblationAxis::Optimizer => &[1, 2, 4, 14],
            AblationAxis::BatchSize => &[9, 10],
            AblationAxis::LearningRate => &[10, 11, 13],
            AblationAxis::Epochs => &[3, 9, 20],
        }
    }

    pub fn ids(self) -> Vec<String> {
        self.rows().iter().map(|&r| table1_id(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_sigmas() {
        let sigmas: Vec<f64> = table1().iter().map(|s| s.config.noise_multiplier.unwrap()).collect();
        assert_eq!(
            sigmas,
            vec![
                0.47, 0.47, 0.67, 0.67, 0.67, 0.67, 0.88, 1.07, 0.76, 0.91, 0.91, 0.76, 0.91, 0.91, 0.91, 1.21, 0.91,
                1.21, 2.81, 0.91
            ]
        );
        assert!(table1().iter().all(|s| s.validate().is_ok()));
    }

    #[test]
    fn config_round_trip() {
        for spec in table1() {
            let back = ExperimentSpec::parse(&spec.id, &spec.to_config()).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn parse_examples() {
        let text = "# row 10\noptimizer = Adam\nbatch_size = 256\nepsilon = 5\nepochs = 100\nmodel = convnet-8-16-16-16\ndataset = synthetic\n";
        let spec = ExperimentSpec::parse("x", text).unwrap();
        assert_eq!(spec.config.batch_size, 256);
        assert_eq!(spec.config.noise_multiplier, None);
        assert_eq!(spec.dataset, DatasetSpec::Synthetic { train_size: DEFAULT_SYNTHETIC_SIZE });
        assert_eq!(spec.model.name(), "convnet-8-16-16-16");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("epsilon = 5\nbogus = 1\n", 2),
            ("\n\nepsilon five\n", 3),
            ("epsilon = x\n", 1),
            ("epsilon = 1\nepsilon = 2\n", 2),
            ("model = resnet\n", 1),
        ];
        for (text, line) in cases {
            match ExperimentSpec::parse("x", text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
        assert!(matches!(ExperimentSpec::parse("x", "epochs = 0\n"), Err(Error::Config(_))));
    }
}
