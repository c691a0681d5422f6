use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dpkit::accountant::{
    calibrate_noise_with, epsilon_of_with, Accounting, Conversion, PrivacySpec, SubsampleSchedule, CIFAR10_TRAIN_SIZE,
};
use dpkit::classical::{evaluate, Classifier, GaussianNb, KernelKind, KernelSpec, Knn, LabeledVectors, Svm, SvmOptions, DEFAULT_K};
use dpkit::data::{read_dataset, write_dataset, Dataset, Provenance};
use dpkit::dp::Optimizer;
use dpkit::harness::{
    self, desk_spec, load_dataset, run_grid, summarize, table1, write_grid_outputs, write_records, DatasetSpec,
    ExperimentSpec, MetricsRecord, ModelSpec, DATA_DIR_ENV, DEFAULT_CIFAR_SUBSET, DEFAULT_SYNTHETIC_SIZE,
};
use dpkit::mechanisms::{laplace_perturb, LaplaceParams};
use dpkit::Result;

/// Differentially private training experiments.
#[derive(Parser)]
#[command(name = "dpkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find the noise multiplier meeting a privacy budget.
    Calibrate(CalibrateArgs),
    /// Train one experiment and write its metrics CSV.
    Train(TrainArgs),
    /// Run a grid of experiments.
    Grid(GridArgs),
    /// Add Laplace noise to a dataset and write it as a container file.
    Perturb(PerturbArgs),
    /// Evaluate KNN, naive Bayes or SVM on (optionally) Laplace-noised data.
    Classical(ClassicalArgs),
    /// Render SVG charts from a metrics CSV.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AccountingArg {
    Pld,
    Rdp,
    RdpClassic,
}

impl From<AccountingArg> for Accounting {
    fn from(a: AccountingArg) -> Self {
        match a {
            AccountingArg::Pld => Accounting::Pld,
            AccountingArg::Rdp => Accounting::Rdp(Conversion::Improved),
            AccountingArg::RdpClassic => Accounting::Rdp(Conversion::Classic),
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long)]
    batch: usize,
    #[arg(long)]
    epochs: usize,
    /// Training set size.
    #[arg(long, default_value_t = CIFAR10_TRAIN_SIZE)]
    n: usize,
    #[arg(long, value_enum, default_value = "pld")]
    accounting: AccountingArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DatasetArg {
    Cifar10,
    Synthetic,
}

/// Settings that override a config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Fixed noise multiplier; 0 trains without privacy.
    #[arg(long)]
    noise_multiplier: Option<f64>,
    /// `convnet` or `convnet-A-B-C-D` for custom channel widths.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum)]
    dataset: Option<DatasetArg>,
    #[arg(long)]
    subset_size: Option<usize>,
}

impl Overrides {
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        let c = &mut spec.config;
        if let Some(v) = self.optimizer {
            c.optimizer = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.clip_norm {
            c.clip_norm = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.noise_multiplier {
            c.noise_multiplier = Some(v);
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.runs {
            c.runs = v;
        }
        if let Some(m) = &self.model {
            spec.model = ModelSpec::parse(m)?;
        }
        if let Some(d) = self.dataset {
            let size = match (d, spec.dataset) {
                (DatasetArg::Cifar10, DatasetSpec::Cifar10 { train_size }) => train_size,
                (DatasetArg::Synthetic, DatasetSpec::Synthetic { train_size }) => train_size,
                (DatasetArg::Cifar10, _) => DEFAULT_CIFAR_SUBSET,
                (DatasetArg::Synthetic, _) => DEFAULT_SYNTHETIC_SIZE,
            };
            spec.dataset = match d {
                DatasetArg::Cifar10 => DatasetSpec::Cifar10 { train_size: size },
                DatasetArg::Synthetic => DatasetSpec::Synthetic { train_size: size },
            };
        }
        if let Some(n) = self.subset_size {
            *spec = spec.clone().with_train_size(n);
        }
        spec.validate()
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    id: String,
    #[command(flatten)]
    overrides: Overrides,
    /// Metrics CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// The 20 reference configurations with preset noise multipliers.
    Table1,
    /// Synthetic benchmark at epsilon 20, 5 and 1.
    Desk,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<Preset>,
    /// Config files; each file's stem names its experiment.
    #[arg(long, num_args = 1..)]
    config: Vec<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DataSource {
    /// Dataset container file; takes precedence over `--dataset`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synthetic")]
    dataset: DatasetArg,
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
}

impl DataSource {
    fn load(&self) -> Result<(Dataset, Dataset)> {
        let spec = match self.dataset {
            DatasetArg::Cifar10 => DatasetSpec::Cifar10 {
                train_size: self.subset_size.unwrap_or(DEFAULT_CIFAR_SUBSET),
            },
            DatasetArg::Synthetic => DatasetSpec::Synthetic {
                train_size: self.subset_size.unwrap_or(DEFAULT_SYNTHETIC_SIZE),
            },
        };
        load_dataset(&spec, self.data_dir.as_deref())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    source: DataSource,
    /// Split to perturb when reading from `--dataset`.
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    #[arg(long, default_value_t = 5.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    sensitivity: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassifierArg {
    Knn,
    Nbc,
    Svm,
    All,
}

#[derive(Args)]
struct ClassicalArgs {
    #[arg(long, value_enum, default_value = "all")]
    classifier: ClassifierArg,
    /// SVM kernels to evaluate; all four when absent.
    #[arg(long, value_enum)]
    kernel: Vec<KernelArg>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    svm_c: f64,
    /// Training split container; `--test` must accompany it.
    #[arg(long, requires = "test")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    test: Option<PathBuf>,
    #[command(flatten)]
    source: DataSource,
    #[arg(long, default_value_t = 5.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    sensitivity: f64,
    /// Skip the Laplace perturbation.
    #[arg(long)]
    no_noise: bool,
    /// Leave the test split unperturbed.
    #[arg(long)]
    clean_test: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Linear,
    Poly,
    Rbf,
    Sigmoid,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Linear => KernelKind::Linear,
            KernelArg::Poly => KernelKind::Poly,
            KernelArg::Rbf => KernelKind::Rbf,
            KernelArg::Sigmoid => KernelKind::Sigmoid,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics CSV written by `train` or `grid`.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Calibrate(a) => calibrate(a),
        Command::Train(a) => train(a),
        Command::Grid(a) => grid(a),
        Command::Perturb(a) => perturb(a),
        Command::Classical(a) => classical(a),
        Command::Report(a) => report(a),
    }
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let target = PrivacySpec::new(a.epsilon, a.delta)?;
    let schedule = SubsampleSchedule::from_training(a.batch, a.epochs, a.n)?;
    let accounting = a.accounting.into();
    let sigma = calibrate_noise_with(&target, &schedule, accounting)?.get();
    let achieved = epsilon_of_with(sigma, &schedule, a.delta, accounting)?;
    println!("sigma = {sigma:.3}");
    if achieved < 1e-2 {
        println!("epsilon = {achieved:.4e}");
    } else {
        println!("epsilon = {achieved:.4}");
    }
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn first_error(results: &[harness::ExperimentResult]) -> Option<dpkit::Error> {
    results.iter().find_map(|r| {
        r.error.as_ref().map(|e| dpkit::Error::Experiment {
            id: r.id.clone(),
            reason: e.clone(),
        })
    })
}

fn train(a: TrainArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(path) => ExperimentSpec::parse(&a.id, &std::fs::read_to_string(path)?)?,
        None => ExperimentSpec::parse(&a.id, "")?,
    };
    a.overrides.apply(&mut spec)?;
    let results = run_grid(std::slice::from_ref(&spec), a.data_dir.as_deref());
    let records: Vec<MetricsRecord> = results.iter().flat_map(|r| r.records.clone()).collect();
    write_records(output(a.out.as_deref())?, &records)?;
    match first_error(&results) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn grid(a: GridArgs) -> Result<()> {
    let mut specs = match a.preset {
        Some(Preset::Table1) => table1(),
        Some(Preset::Desk) => [20.0, 5.0, 1.0]
            .iter()
            .map(|&eps| desk_spec(format!("desk-eps{eps}"), eps, 0, 3))
            .collect(),
        None => {
            if a.config.is_empty() {
                return Err(dpkit::Error::Config("give --preset or at least one --config file".into()));
            }
            a.config
                .iter()
                .map(|p| {
                    let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
                    ExperimentSpec::parse(id, &std::fs::read_to_string(p)?)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    for spec in &mut specs {
        a.overrides.apply(spec)?;
    }
    let mut ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(dpkit::Error::Config(format!("duplicate experiment id `{}`", w[0])));
    }
    let results = run_grid(&specs, a.data_dir.as_deref());
    write_grid_outputs(&a.out, &specs, &results)?;
    for r in &results {
        match (&r.error, summarize(&r.records).first()) {
            (Some(e), _) => println!("{}: failed: {e}", r.id),
            (None, Some(s)) => println!(
                "{}: runs {} test_acc {:.4} epsilon {:.3} sigma {:.3}",
                s.experiment_id, s.runs, s.test_acc, s.epsilon_spent, s.sigma
            ),
            (None, None) => println!("{}: no records", r.id),
        }
    }
    Ok(())
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let data = match &a.source.input {
        Some(p) => read_dataset(p)?,
        None => {
            let (train, test) = a.source.load()?;
            if a.split == SplitArg::Train {
                train
            } else {
                test
            }
        }
    };
    let params = LaplaceParams::new(a.epsilon, a.sensitivity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let noisy = data.with_images(laplace_perturb(data.images(), &params, &mut rng)?, Provenance::Perturbed)?;
    write_dataset(&noisy, &a.out)?;
    println!("wrote {} examples with Laplace scale {} to {}", noisy.len(), params.scale(), a.out.display());
    Ok(())
}

fn classical(a: ClassicalArgs) -> Result<()> {
    let (mut train, mut test) = match (&a.train, &a.test) {
        (Some(tr), Some(te)) => (read_dataset(tr)?, read_dataset(te)?),
        _ => a.source.load()?,
    };
    let (epsilon, scale) = if a.no_noise {
        (f64::INFINITY, 0.0)
    } else {
        let params = LaplaceParams::new(a.epsilon, a.sensitivity)?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        train = train.with_images(laplace_perturb(train.images(), &params, &mut rng)?, Provenance::Perturbed)?;
        if !a.clean_test {
            test = test.with_images(laplace_perturb(test.images(), &params, &mut rng)?, Provenance::Perturbed)?;
        }
        (params.epsilon(), params.scale())
    };
    let train_v = LabeledVectors::from_dataset(&train);
    let test_v = LabeledVectors::from_dataset(&test);

    let mut models: Vec<(String, Box<dyn Classifier>)> = Vec::new();
    if matches!(a.classifier, ClassifierArg::Knn | ClassifierArg::All) {
        models.push((format!("knn-{}", a.k), Box::new(Knn::fit(train_v.clone(), a.k)?)));
    }
    if matches!(a.classifier, ClassifierArg::Nbc | ClassifierArg::All) {
        models.push(("nbc".into(), Box::new(GaussianNb::fit(&train_v)?)));
    }
    if matches!(a.classifier, ClassifierArg::Svm | ClassifierArg::All) {
        let kinds: Vec<KernelKind> = if a.kernel.is_empty() {
            KernelKind::ALL.to_vec()
        } else {
            a.kernel.iter().map(|&k| k.into()).collect()
        };
        let opts = SvmOptions {
            c: a.svm_c,
            ..SvmOptions::default()
        };
        for kind in kinds {
            let kernel = KernelSpec::with_defaults(kind, train_v.dim())?;
            models.push((format!("svm-{}", kind.name()), Box::new(Svm::fit(&train_v, kernel, &opts)?)));
        }
    }

    let mut records = Vec::new();
    for (id, model) in &models {
        let tr = evaluate(model.as_ref(), &train_v)?;
        let te = evaluate(model.as_ref(), &test_v)?;
        eprintln!("{id}: train_acc {:.4} test_acc {:.4}", tr.accuracy, te.accuracy);
        records.push(MetricsRecord {
            experiment_id: id.clone(),
            run: 0,
            epoch: 1,
            train_loss: tr.loss,
            train_acc: tr.accuracy,
            test_loss: te.loss,
            test_acc: te.accuracy,
            epsilon_spent: epsilon,
            sigma: scale,
        });
    }
    write_records(output(a.out.as_deref())?, &records)
}

fn report(a: ReportArgs) -> Result<()> {
    let records = harness::read_records(File::open(&a.csv)?)?;
    let charts = harness::report(&records)?;
    std::fs::create_dir_all(&a.out_dir)?;
    for chart in charts {
        let path = a.out_dir.join(format!("{}.svg", chart.name));
        std::fs::write(&path, chart.svg)?;
        println!("{}", path.display());
    }
    Ok(())
}
