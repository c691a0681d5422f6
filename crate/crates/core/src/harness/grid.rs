use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::config::{DatasetSpec, ExperimentSpec, ModelSpec};
use crate::accountant::CIFAR10_TRAIN_SIZE;
use crate::convnet::{ConvNet, WidthConfig};
use crate::data::{load_cifar10, Dataset, SyntheticOptions};
use crate::dp::{self, DpTrainConfig, MetricsRecord, Optimizer};
use crate::{Error, Result};

/// Header of every metrics CSV.
pub const CSV_HEADER: [&str; 9] = [
    "experiment_id",
    "run",
    "epoch",
    "train_loss",
    "train_acc",
    "test_loss",
    "test_acc",
    "epsilon_spent",
    "sigma",
];

/// Class separation of the synthetic benchmark.
pub const DESK_SEPARATION: f64 = 3.0;
/// Seed of the synthetic benchmark's data; independent of run seeds.
pub const DESK_DATA_SEED: u64 = 7;
pub const DESK_TEST_PER_CLASS: usize = 50;
pub const DESK_WIDTHS: [usize; 4] = [8, 16, 16, 16];

/// Reduced-width network used for the synthetic benchmark.
pub fn desk_model() -> ModelSpec {
    ModelSpec::ConvNet(WidthConfig::with_channels(DESK_WIDTHS))
}

/// Synthetic benchmark experiment at privacy level `epsilon`.
pub fn desk_spec(id: impl Into<String>, epsilon: f64, seed: u64, runs: usize) -> ExperimentSpec {
    ExperimentSpec {
        id: id.into(),
        config: DpTrainConfig {
            optimizer: Optimizer::Adam,
            batch_size: 60,
            epsilon,
            delta: 1e-5,
            clip_norm: 1.0,
            learning_rate: 5e-3,
            epochs: 6,
            noise_multiplier: None,
            seed,
            runs,
        },
        model: desk_model(),
        dataset: DatasetSpec::Synthetic { train_size: 600 },
    }
}

/// Train and test split for a dataset selector.
pub fn load_dataset(spec: &DatasetSpec, data_dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
    match *spec {
        DatasetSpec::Synthetic { train_size } => {
            let classes = crate::data::NUM_CLASSES;
            let mut opts = SyntheticOptions::new(classes, train_size.div_ceil(classes), DESK_SEPARATION, DESK_DATA_SEED);
            opts.test_per_class = DESK_TEST_PER_CLASS;
            let (train, test) = opts.generate()?;
            Ok((train.head(train_size)?, test))
        }
        DatasetSpec::Cifar10 { train_size } => {
            let dir = data_dir.ok_or_else(|| {
                Error::Data("CIFAR-10 requested but no data directory given (set DPKIT_DATA_DIR)".into())
            })?;
            load_cifar10(dir, Some(train_size))
        }
    }
}

/// Outcome of one experiment in a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub id: String,
    pub records: Vec<MetricsRecord>,
    pub error: Option<String>,
}

/// Mean over runs of each final-epoch metric.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub experiment_id: String,
    pub runs: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub epsilon_spent: f64,
    pub sigma: f64,
}

/// Summaries in order of first appearance.
pub fn summarize(records: &[MetricsRecord]) -> Vec<Summary> {
    let mut order: Vec<&str> = Vec::new();
    let mut finals: HashMap<&str, HashMap<usize, &MetricsRecord>> = HashMap::new();
    for r in records {
        if !finals.contains_key(r.experiment_id.as_str()) {
            order.push(&r.experiment_id);
        }
        let slot = finals.entry(&r.experiment_id).or_default().entry(r.run).or_insert(r);
        if r.epoch >= slot.epoch {
            *slot = r;
        }
    }
    order
        .into_iter()
        .map(|id| {
            let mut runs: Vec<(&usize, &&MetricsRecord)> = finals[id].iter().collect();
            runs.sort_by_key(|(run, _)| **run);
            let n = runs.len() as f64;
            let mean = |f: fn(&MetricsRecord) -> f64| runs.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
            Summary {
                experiment_id: id.to_string(),
                runs: runs.len(),
                train_loss: mean(|r| r.train_loss),
                train_acc: mean(|r| r.train_acc),
                test_loss: mean(|r| r.test_loss),
                test_acc: mean(|r| r.test_acc),
                epsilon_spent: mean(|r| r.epsilon_spent),
                sigma: mean(|r| r.sigma),
            }
        })
        .collect()
}

/// Runs every spec `runs` times with seeds `seed + run`, calling `runner` for each run.
/// A failing experiment is recorded and the grid moves on.
pub fn run_grid_with<F>(specs: &[ExperimentSpec], mut runner: F) -> Vec<ExperimentResult>
where
    F: FnMut(&ExperimentSpec, usize) -> Result<Vec<MetricsRecord>>,
{
    let mut results = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut records = Vec::new();
        let mut error = None;
        if let Err(e) = spec.validate() {
            error = Some(e.to_string());
        } else {
            for run in 0..spec.config.runs {
                match runner(spec, run) {
                    Ok(r) => records.extend(r),
                    Err(e) => {
                        log::error!("{} run {run} failed: {e}", spec.id);
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
        }
        results.push(ExperimentResult {
            id: spec.id.clone(),
            records,
            error,
        });
    }
    results
}

/// Trains a fresh model for one run of `spec`.
pub fn run_experiment(spec: &ExperimentSpec, run: usize, train: &Dataset, test: &Dataset) -> Result<Vec<MetricsRecord>> {
    let mut config = spec.config.clone();
    config.seed = spec.config.seed.wrapping_add(run as u64);
    if let Some(s) = config.noise_multiplier {
        if s > 0.0 && train.len() != CIFAR10_TRAIN_SIZE {
            log::warn!(
                "{}: noise multiplier {s} belongs to a {CIFAR10_TRAIN_SIZE}-image schedule; recalibrating for {} images",
                spec.id,
                train.len()
            );
            config.noise_multiplier = None;
        }
    }
    match spec.model {
        ModelSpec::ConvNet(widths) => {
            let mut model = ConvNet::init(config.seed, widths)?;
            dp::train(&config, &mut model, train, test, &spec.id, run)
        }
    }
}

/// Runs a grid, loading each distinct dataset once.
pub fn run_grid(specs: &[ExperimentSpec], data_dir: Option<&Path>) -> Vec<ExperimentResult> {
    let mut cache: HashMap<String, std::result::Result<(Dataset, Dataset), String>> = HashMap::new();
    run_grid_with(specs, |spec, run| {
        let key = format!("{:?}", spec.dataset);
        let entry = cache
            .entry(key)
            .or_insert_with(|| {
                load_dataset(&spec.dataset, data_dir).map_err(|e| match e {
                    Error::Data(m) => m,
                    e => e.to_string(),
                })
            });
        match entry {
            Ok((train, test)) => run_experiment(spec, run, train, test),
            Err(e) => Err(Error::Data(e.clone())),
        }
    })
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

pub fn write_records<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.experiment_id.clone(),
            r.run.to_string(),
            r.epoch.to_string(),
            fmt_f64(r.train_loss),
            fmt_f64(r.train_acc),
            fmt_f64(r.test_loss),
            fmt_f64(r.test_acc),
            fmt_f64(r.epsilon_spent),
            fmt_f64(r.sigma),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a metrics CSV. Errors name the 1-based line.
pub fn read_records<R: std::io::Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = reader.records();
    let header = rows.next().ok_or(Error::Parse {
        line: 1,
        reason: "empty CSV".into(),
    })?;
    let header = header.map_err(|e| Error::Parse {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            reason: format!("header must be `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |reason: String| Error::Parse { line, reason };
        if row.len() != CSV_HEADER.len() {
            return Err(err(format!("expected {} fields, got {}", CSV_HEADER.len(), row.len())));
        }
        let int = |i: usize| -> Result<usize> {
            row[i]
                .parse()
                .map_err(|_| err(format!("`{}` is not an integer in column {}", &row[i], CSV_HEADER[i])))
        };
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| err(format!("`{}` is not a number in column {}", &row[i], CSV_HEADER[i])))
        };
        records.push(MetricsRecord {
            experiment_id: row[0].to_string(),
            run: int(1)?,
            epoch: int(2)?,
            train_loss: num(3)?,
            train_acc: num(4)?,
            test_loss: num(5)?,
            test_acc: num(6)?,
            epsilon_spent: num(7)?,
            sigma: num(8)?,
        });
    }
    Ok(records)
}

pub fn write_summary<W: Write>(out: W, results: &[ExperimentResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "experiment_id",
        "runs",
        "train_loss",
        "train_acc",
        "test_loss",
        "test_acc",
        "epsilon_spent",
        "sigma",
        "error",
    ])
    .map_err(csv_err)?;
    for result in results {
        let summary = summarize(&result.records).into_iter().next();
        let error = result.error.clone().unwrap_or_default();
        let row = match summary {
            Some(s) => vec![
                s.experiment_id,
                s.runs.to_string(),
                fmt_f64(s.train_loss),
                fmt_f64(s.train_acc),
                fmt_f64(s.test_loss),
                fmt_f64(s.test_acc),
                fmt_f64(s.epsilon_spent),
                fmt_f64(s.sigma),
                error,
            ],
            None => {
                let mut row = vec![result.id.clone(), "0".into()];
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(error);
                row
            }
        };
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Paths written next to a grid CSV.
pub fn companion_paths(csv_path: &Path) -> (PathBuf, PathBuf) {
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
    let dir = csv_path.parent().unwrap_or(Path::new(""));
    (dir.join(format!("{stem}_summary.csv")), dir.join(format!("{stem}.meta")))
}

/// Writes records, summary and a metadata file holding the wall-clock timestamp.
pub fn write_grid_outputs(csv_path: &Path, specs: &[ExperimentSpec], results: &[ExperimentResult]) -> Result<()> {
    let records: Vec<MetricsRecord> = results.iter().flat_map(|r| r.records.clone()).collect();
    write_records(std::fs::File::create(csv_path)?, &records)?;
    let (summary_path, meta_path) = companion_paths(csv_path);
    write_summary(std::fs::File::create(summary_path)?, results)?;
    let mut meta = std::fs::File::create(meta_path)?;
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    writeln!(meta, "timestamp = {now}")?;
    writeln!(meta, "dpkit_version = {}", env!("CARGO_PKG_VERSION"))?;
    writeln!(meta, "experiments = {}", specs.len())?;
    for spec in specs {
        writeln!(meta, "[{}]", spec.id)?;
        write!(meta, "{}", spec.to_config())?;
    }
    Ok(())
}

/// Outcome of a directional check over mean accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub holds: bool,
    pub inversions: usize,
    pub worst_rise: f64,
}

/// Whether `values` is nonincreasing, allowing at most `max_inversions`
/// adjacent rises, each no larger than `tolerance`.
pub fn nonincreasing_within(values: &[f64], tolerance: f64, max_inversions: usize) -> TrendCheck {
    let rises: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    let worst_rise = rises.iter().copied().fold(0.0, f64::max);
    TrendCheck {
        holds: rises.len() <= max_inversions && worst_rise <= tolerance,
        inversions: rises.len(),
        worst_rise,
    }
}

/// Accuracy should fall as epsilon falls: means ordered by decreasing epsilon,
/// one inversion of at most two points allowed.
pub fn finding_epsilon(mean_acc_by_decreasing_eps: &[f64]) -> TrendCheck {
    nonincreasing_within(mean_acc_by_decreasing_eps, 0.02, 1)
}

/// Accuracy should rise with batch size; reported, never enforced.
pub fn finding_batch(mean_acc_by_increasing_batch: &[f64]) -> TrendCheck {
    let reversed: Vec<f64> = mean_acc_by_increasing_batch.iter().rev().copied().collect();
    let check = nonincreasing_within(&reversed, 0.0, 0);
    if !check.holds {
        log::warn!("larger batches did not improve accuracy at desk scale: {mean_acc_by_increasing_batch:?}");
    }
    check
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, run: usize, epoch: usize, acc: f64) -> MetricsRecord {
        MetricsRecord {
            experiment_id: id.into(),
            run,
            epoch,
            train_loss: 1.0 - acc,
            train_acc: acc,
            test_loss: 1.0 - acc,
            test_acc: acc,
            epsilon_spent: epoch as f64,
            sigma: 1.0,
        }
    }

    #[test]
    fn summary_uses_final_epoch_mean() {
        let records = vec![
            rec("a", 0, 1, 0.1),
            rec("a", 0, 2, 0.5),
            rec("a", 1, 1, 0.2),
            rec("a", 1, 2, 0.7),
            rec("b", 0, 1, 0.3),
        ];
        let s = summarize(&records);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].runs, 2);
        assert!((s[0].test_acc - 0.6).abs() < 1e-15);
        assert_eq!(s[0].epsilon_spent, 2.0);
        assert_eq!(s[1].test_acc, 0.3);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let records = vec![rec("a", 0, 1, 0.25), MetricsRecord {
            epsilon_spent: f64::INFINITY,
            ..rec("b", 2, 3, 1.0 / 3.0)
        }];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("experiment_id,run,epoch,train_loss,train_acc,test_loss,test_acc,epsilon_spent,sigma\n"));
        assert_eq!(read_records(&buf[..]).unwrap(), records);
        assert!(matches!(read_records(&b""[..]), Err(Error::Parse { line: 1, .. })));
        let bad = format!("{}\na,0,1,x,0,0,0,0,0\n", CSV_HEADER.join(","));
        assert!(matches!(read_records(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let short = format!("{}\na,0,1,0,0,0,0,0,0\na,0\n", CSV_HEADER.join(","));
        assert!(matches!(read_records(short.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn grid_continues_after_failure() {
        let mut specs = vec![desk_spec("ok", 5.0, 0, 2), desk_spec("bad", 5.0, 0, 1), desk_spec("ok2", 5.0, 0, 1)];
        specs[1].config.epochs = 0;
        let results = run_grid_with(&specs, |spec, run| Ok(vec![rec(&spec.id, run, 1, 0.5)]));
        assert_eq!(results.len(), 3);
        assert_eq!(results[0].records.len(), 2);
        assert!(results[1].error.is_some());
        assert_eq!(results[2].records.len(), 1);
    }

    #[test]
    fn trend_checks() {
        assert!(finding_epsilon(&[0.5, 0.4, 0.3]).holds);
        assert!(finding_epsilon(&[0.5, 0.51, 0.3]).holds);
        assert!(!finding_epsilon(&[0.5, 0.53, 0.3]).holds);
        assert!(!finding_epsilon(&[0.3, 0.31, 0.32]).holds);
        assert!(finding_batch(&[0.3, 0.4]).holds);
        assert!(!finding_batch(&[0.4, 0.3]).holds);
    }
}
