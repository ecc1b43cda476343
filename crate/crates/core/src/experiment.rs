//! Experiment configuration, the training loop, and the commands behind
//! the `p16` binary: train, compare, scan, model-info and tolerance.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{pred, scan_function, tolerance_report, ScanFunction, ScanReport, Stats, ToleranceReport};
use crate::dataio::{
    batches, find_mnist_dir, load_mnist, load_model, model_file_size, save_model, write_metrics, Dataset, EpochMetrics,
    MetricsSummary, METRICS_COLUMNS,
};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, infer_shapes, LayerKind, Model};
use crate::optim::{EpsilonProbe, InstabilityCause, InstabilityEvent, OptimConfig, OptimState, OptimizerKind};
use crate::tensor::{NumericEvents, Precision};

/// Everything that defines a run. Serialized as a flat JSON object; absent
/// fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub architecture: Vec<LayerKind>,
    /// Per-sample input shape; MNIST images are viewed with this shape.
    pub input_shape: Vec<usize>,
    pub precision: Precision,
    pub optimizer: OptimizerKind,
    pub lr: f32,
    pub beta: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Directory with the four MNIST IDX files; searched for when absent.
    pub data_dir: Option<PathBuf>,
    /// Use only the first `n` training / test samples.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub output_dir: PathBuf,
    /// Also train a Mixed run in `compare`.
    pub include_mixed: bool,
    /// Batch size for evaluation passes.
    pub eval_batch: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            architecture: dnn_architecture(784, &[256, 256, 256], 10),
            input_shape: vec![784],
            precision: Precision::Pure16,
            optimizer: OptimizerKind::Sgd,
            lr: 1e-3,
            beta: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-3,
            epochs: 10,
            batch_size: 64,
            seed: 42,
            data_dir: None,
            train_subset: Some(10_000),
            test_subset: Some(2_000),
            output_dir: PathBuf::from("runs"),
            include_mixed: false,
            eval_batch: 500,
        }
    }
}

/// Dense/ReLU stack ending in a softmax classifier.
pub fn dnn_architecture(inputs: usize, hidden: &[usize], classes: usize) -> Vec<LayerKind> {
    let mut kinds = Vec::new();
    let mut prev = inputs;
    for &h in hidden {
        kinds.push(LayerKind::Dense { inputs: prev, outputs: h });
        kinds.push(LayerKind::Relu);
        prev = h;
    }
    kinds.push(LayerKind::Dense { inputs: prev, outputs: classes });
    kinds.push(LayerKind::Softmax);
    kinds
}

/// Two conv/BatchNorm/ReLU/max-pool blocks and a dense classifier for
/// `[1, 28, 28]` inputs.
pub fn small_cnn_architecture() -> Vec<LayerKind> {
    vec![
        LayerKind::Conv2d { in_channels: 1, filters: 8, kernel: [3, 3], stride: 1, padding: 0 },
        LayerKind::BatchNorm { channels: 8 },
        LayerKind::Relu,
        LayerKind::MaxPool2d { size: 2, stride: 2 },
        LayerKind::Conv2d { in_channels: 8, filters: 16, kernel: [3, 3], stride: 1, padding: 0 },
        LayerKind::BatchNorm { channels: 16 },
        LayerKind::Relu,
        LayerKind::MaxPool2d { size: 2, stride: 2 },
        LayerKind::Flatten,
        LayerKind::Dense { inputs: 400, outputs: 10 },
        LayerKind::Softmax,
    ]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            kind: self.optimizer,
            lr: self.lr,
            beta: self.beta,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Check everything that can be checked without data.
    pub fn validate(&self) -> Result<()> {
        self.optim_config().validate()?;
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {:?}", self.input_shape)));
        }
        if !matches!(self.architecture.last(), Some(LayerKind::Softmax)) {
            return Err(Error::Config("architecture must end with a softmax layer".into()));
        }
        let shapes = infer_shapes(&self.input_shape, &self.architecture)?;
        if shapes.last().map(Vec::len) != Some(1) {
            return Err(Error::Config("architecture must produce a flat class vector".into()));
        }
        if matches!(self.train_subset, Some(0)) || matches!(self.test_subset, Some(0)) {
            return Err(Error::Config("subsets must hold at least one sample".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> Result<usize> {
        let shapes = infer_shapes(&self.input_shape, &self.architecture)?;
        Ok(shapes.last().map_or(0, |s| s[0]))
    }

    /// Freshly initialized model for this config at `precision`.
    pub fn build_model(&self, precision: Precision) -> Result<Model> {
        Model::new(&self.input_shape, &self.architecture, precision, self.seed)
    }
}

/// Training and test sets at binary32, viewed with the configured input shape.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

impl Split {
    pub fn cast(&self, precision: Precision) -> Split {
        Split { train: self.train.cast(precision), test: self.test.cast(precision) }
    }
}

/// The MNIST directory for a config: `data_dir`, `$P16_MNIST_DIR`,
/// `./data/mnist`, or the workspace's `data/mnist`.
pub fn resolve_data_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    if let Some(d) = &cfg.data_dir {
        return Ok(d.clone());
    }
    let candidates = [PathBuf::from("data/mnist"), Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")];
    find_mnist_dir(&candidates).ok_or_else(|| {
        Error::Config("MNIST not found: set data_dir or P16_MNIST_DIR (see scripts/fetch_mnist.sh)".into())
    })
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<Split> {
    let dir = resolve_data_dir(cfg)?;
    let load = |images: &str, labels: &str, subset: Option<usize>| -> Result<Dataset> {
        let d = load_mnist(&dir.join(images), &dir.join(labels), Precision::Pure32)?;
        let d = match subset {
            Some(n) => d.take(n),
            None => d,
        };
        d.reshaped(&cfg.input_shape)
    };
    Ok(Split {
        train: load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", cfg.train_subset)?,
        test: load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", cfg.test_subset)?,
    })
}

/// Accuracy, mean loss and numeric events of an inference pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub events: NumericEvents,
}

pub fn evaluate(model: &Model, data: &Dataset, batch: usize) -> Result<Evaluation> {
    let n = data.len();
    let (mut correct, mut loss) = (0usize, 0.0f64);
    let mut events = NumericEvents::default();
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let (x, y) = data.gather(chunk)?;
        let (p, ev) = model.predict(&x)?;
        let (l, lev) = cross_entropy(&p, &y)?;
        correct += count_correct(&p.values(), p.shape()[1], &y)?;
        loss += l as f64 * chunk.len() as f64;
        events += ev + lev;
    }
    let denom = n.max(1) as f64;
    Ok(Evaluation { accuracy: correct as f64 / denom, loss: loss / denom, events })
}

fn count_correct(probs: &[f32], classes: usize, labels: &[usize]) -> Result<usize> {
    let mut correct = 0;
    for (row, &l) in probs.chunks(classes).zip(labels) {
        correct += (pred(row)? == l) as usize;
    }
    Ok(correct)
}

/// Why and where a run was stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub precision: Precision,
    pub epoch: usize,
    pub step: u64,
    pub non_finite_fraction: f64,
    pub first_event: Option<InstabilityEvent>,
    pub overflow_events: u64,
    pub nan_events: u64,
    pub moment_underflow_events: u64,
    pub epsilon: EpsilonProbe,
}

impl fmt::Display for InstabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} run stopped at epoch {} step {}: {:.1}% of weights non-finite",
            self.precision.name(),
            self.epoch,
            self.step,
            100.0 * self.non_finite_fraction
        )?;
        if let Some(e) = &self.first_event {
            write!(
                f,
                "; first event {} at step {} (layer {}, param {}, index {})",
                e.cause, e.step, e.layer, e.param, e.index
            )?;
        }
        Ok(())
    }
}

/// Fraction of non-finite weights above which a run is aborted.
pub const ABORT_NON_FINITE_FRACTION: f64 = 0.5;

/// One model and its optimizer, trained an epoch at a time.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    optim: OptimState,
    batch_size: usize,
    eval_batch: usize,
    seed: u64,
    history: Vec<EpochMetrics>,
    instability: Option<InstabilityReport>,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, precision: Precision) -> Result<Trainer> {
        cfg.validate()?;
        Trainer::from_model(cfg.build_model(precision)?, cfg)
    }

    /// Continue from an existing model with the config's optimizer and batching.
    pub fn from_model(model: Model, cfg: &ExperimentConfig) -> Result<Trainer> {
        let optim = OptimState::new(cfg.optim_config(), model.precision())?;
        Ok(Trainer {
            model,
            optim,
            batch_size: cfg.batch_size,
            eval_batch: cfg.eval_batch,
            seed: cfg.seed,
            history: Vec::new(),
            instability: None,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn optimizer(&self) -> &OptimState {
        &self.optim
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    pub fn instability(&self) -> Option<&InstabilityReport> {
        self.instability.as_ref()
    }

    pub fn is_stopped(&self) -> bool {
        self.instability.is_some()
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    fn report(&self, epoch: usize) -> InstabilityReport {
        InstabilityReport {
            precision: self.model.precision(),
            epoch,
            step: self.optim.t(),
            non_finite_fraction: self.model.non_finite_fraction(),
            first_event: self.optim.first_event().copied(),
            overflow_events: self.optim.event_count(InstabilityCause::OverflowInf),
            nan_events: self.optim.event_count(InstabilityCause::NaNProduced),
            moment_underflow_events: self.optim.event_count(InstabilityCause::MomentUnderflowToZero),
            epsilon: self.optim.epsilon_probe(),
        }
    }

    /// Train one epoch and evaluate on `test`. Both datasets must carry the
    /// model's precision. Returns `None` once the run has been stopped.
    pub fn run_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<Option<&EpochMetrics>> {
        if self.is_stopped() {
            return Ok(None);
        }
        let precision = self.model.precision();
        if train.precision() != precision || test.precision() != precision {
            return Err(Error::PrecisionMismatch { op: "run_epoch" });
        }
        let epoch = self.history.len() + 1;
        let start = Instant::now();
        let mut events = NumericEvents::default();
        let (mut correct, mut loss_sum) = (0usize, 0.0f64);
        let trainable: usize =
            self.model.layers().iter().flat_map(|l| l.params()).filter(|p| p.is_trainable()).map(|p| p.len()).sum();
        for batch in batches(train.len(), self.batch_size, self.seed, epoch as u64 - 1)? {
            let (x, y) = train.gather(&batch)?;
            let (p, loss, ev) = self.model.train_step_gradients(&x, &y)?;
            events += ev;
            correct += count_correct(&p.values(), p.shape()[1], &y)?;
            loss_sum += loss as f64 * batch.len() as f64;
            let step = self.optim.step(&mut self.model)?;
            if step.non_finite_weights as f64 > ABORT_NON_FINITE_FRACTION * trainable as f64
                && self.model.non_finite_fraction() > ABORT_NON_FINITE_FRACTION
            {
                self.instability = Some(self.report(epoch));
                return Ok(None);
            }
        }
        let eval = evaluate(&self.model, test, self.eval_batch)?;
        let n = train.len().max(1) as f64;
        self.history.push(EpochMetrics {
            epoch,
            train_acc: correct as f64 / n,
            test_acc: eval.accuracy,
            train_loss: loss_sum / n,
            test_loss: eval.loss,
            wall_time: start.elapsed().as_secs_f64(),
            overflow: events.overflow_count,
            underflow: events.underflow_to_zero_count,
            nan: events.nan_count,
        });
        Ok(self.history.last())
    }

    /// Run `epochs` epochs, stopping early on instability.
    pub fn run(&mut self, split: &Split, epochs: usize) -> Result<()> {
        for _ in 0..epochs {
            if self.run_epoch(&split.train, &split.test)?.is_none() {
                break;
            }
        }
        Ok(())
    }
}

/// Train at the config's precision on already-loaded data.
pub fn run_training(cfg: &ExperimentConfig, data: &Split) -> Result<Trainer> {
    let mut t = Trainer::new(cfg, cfg.precision)?;
    t.run(&data.cast(cfg.precision), cfg.epochs)?;
    Ok(t)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Files written by `cmd_train`.
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub metrics_csv: PathBuf,
    pub metrics_json: PathBuf,
    pub model: PathBuf,
    pub history: Vec<EpochMetrics>,
}

/// Train, then write `metrics.csv`, `metrics.json` and `model.p16n` into the
/// output directory. An unstable run writes `instability.json` and fails
/// with [`Error::Unstable`].
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    cmd_train_with(cfg, &data)
}

pub fn cmd_train_with(cfg: &ExperimentConfig, data: &Split) -> Result<TrainArtifacts> {
    let trainer = run_training(cfg, data)?;
    ensure_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("config.json"), cfg)?;
    let metrics_csv = cfg.output_dir.join("metrics.csv");
    let summary = MetricsSummary::from_history(cfg.precision, trainer.history());
    let metrics_json = write_metrics(trainer.history(), &summary, &metrics_csv)?;
    if let Some(r) = trainer.instability() {
        write_json(&cfg.output_dir.join("instability.json"), r)?;
        return Err(Error::Unstable(r.to_string()));
    }
    let model = cfg.output_dir.join("model.p16n");
    save_model(trainer.model(), &model)?;
    Ok(TrainArtifacts { metrics_csv, metrics_json, model, history: trainer.history().to_vec() })
}

/// Agreement statistics between the Pure32 run and one other run after an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTolerance {
    pub epoch: usize,
    pub precision: Precision,
    pub delta: Stats,
    pub gamma: Stats,
    pub fraction_guaranteed: f64,
    pub fraction_agree: f64,
    pub boundary_ties: usize,
    pub acc_gap: Option<f64>,
}

impl EpochTolerance {
    fn of(epoch: usize, precision: Precision, r: &ToleranceReport) -> EpochTolerance {
        EpochTolerance {
            epoch,
            precision,
            delta: r.delta,
            gamma: r.gamma,
            fraction_guaranteed: r.fraction_guaranteed,
            fraction_agree: r.fraction_agree,
            boundary_ties: r.boundary_ties,
            acc_gap: r.acc_gap,
        }
    }
}

/// Runs trained side by side from one seed, with per-epoch tolerance
/// statistics of each run against the Pure32 reference.
#[derive(Clone, Debug)]
pub struct Comparison {
    /// Pure32 first, then Pure16, then Mixed when requested.
    pub runs: Vec<Trainer>,
    pub tolerance: Vec<EpochTolerance>,
    /// Full report (with records) of the last epoch, Pure32 vs Pure16.
    pub final_report: Option<ToleranceReport>,
    /// Every record checked across all epochs and runs.
    pub records_checked: usize,
}

impl Comparison {
    pub fn run(&self, precision: Precision) -> Option<&Trainer> {
        self.runs.iter().find(|t| t.model().precision() == precision)
    }

    /// `|acc16 - acc32|` on the test set after the last epoch of both runs.
    pub fn acc_gap(&self) -> Option<f64> {
        let a = self.run(Precision::Pure32)?.history().last()?.test_acc;
        let b = self.run(Precision::Pure16)?.history().last()?.test_acc;
        Some((a - b).abs())
    }
}

/// Train Pure32 and Pure16 (and Mixed when `include_mixed`) in lockstep.
pub fn run_comparison(cfg: &ExperimentConfig, data: &Split) -> Result<Comparison> {
    cfg.validate()?;
    let mut precisions = vec![Precision::Pure32, Precision::Pure16];
    if cfg.include_mixed {
        precisions.push(Precision::Mixed);
    }
    let splits: Vec<Split> = precisions.iter().map(|&p| data.cast(p)).collect();
    let mut runs = precisions.iter().map(|&p| Trainer::new(cfg, p)).collect::<Result<Vec<_>>>()?;
    let mut tolerance = Vec::new();
    let mut final_report = None;
    let mut records_checked = 0;
    let reference = data.test.images()?;
    for epoch in 1..=cfg.epochs {
        for (t, s) in runs.iter_mut().zip(&splits) {
            t.run_epoch(&s.train, &s.test)?;
        }
        if runs[0].is_stopped() {
            break;
        }
        for t in runs.iter().skip(1).filter(|t| !t.is_stopped()) {
            let r = tolerance_report(runs[0].model(), t.model(), &reference, Some(data.test.labels()), cfg.eval_batch)?;
            records_checked += r.count;
            tolerance.push(EpochTolerance::of(epoch, t.model().precision(), &r));
            if t.model().precision() == Precision::Pure16 {
                final_report = Some(r);
            }
        }
        if runs.iter().all(Trainer::is_stopped) {
            break;
        }
    }
    Ok(Comparison { runs, tolerance, final_report, records_checked })
}

/// Run a comparison and write per-run metrics, `compare.csv` (one row per
/// epoch per precision), `tolerance_epochs.csv`, the final per-input
/// `tolerance.csv`/`tolerance.json` and `compare.json`.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<Comparison> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    cmd_compare_with(cfg, &data)
}

#[derive(Serialize)]
struct CompareSummary<'a> {
    runs: Vec<MetricsSummary>,
    instability: Vec<&'a InstabilityReport>,
    tolerance: &'a [EpochTolerance],
    final_tolerance: Option<&'a ToleranceReport>,
    acc_gap: Option<f64>,
}

pub fn cmd_compare_with(cfg: &ExperimentConfig, data: &Split) -> Result<Comparison> {
    let cmp = run_comparison(cfg, data)?;
    let dir = &cfg.output_dir;
    ensure_dir(dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    let mut summaries = Vec::new();
    let mut table = std::io::BufWriter::new(std::fs::File::create(dir.join("compare.csv"))?);
    writeln!(table, "precision,{}", METRICS_COLUMNS.join(","))?;
    for t in &cmp.runs {
        let p = t.model().precision();
        let mut s = MetricsSummary::from_history(p, t.history());
        if p == Precision::Pure16 {
            s.acc_gap = cmp.acc_gap();
        }
        write_metrics(t.history(), &s, &dir.join(format!("metrics_{}.csv", p.name())))?;
        for m in t.history() {
            writeln!(
                table,
                "{},{},{},{},{},{},{:.3},{},{},{}",
                p.name(),
                m.epoch,
                m.train_acc,
                m.test_acc,
                m.train_loss,
                m.test_loss,
                m.wall_time,
                m.overflow,
                m.underflow,
                m.nan
            )?;
        }
        summaries.push(s);
    }
    table.flush()?;
    let mut tol = std::io::BufWriter::new(std::fs::File::create(dir.join("tolerance_epochs.csv"))?);
    writeln!(
        tol,
        "epoch,precision,delta_mean,delta_min,delta_max,delta_var,gamma_mean,gamma_min,gamma_max,gamma_var,\
         fraction_guaranteed,fraction_agree,boundary_ties"
    )?;
    for e in &cmp.tolerance {
        writeln!(
            tol,
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{}",
            e.epoch,
            e.precision.name(),
            e.delta.mean,
            e.delta.min,
            e.delta.max,
            e.delta.variance,
            e.gamma.mean,
            e.gamma.min,
            e.gamma.max,
            e.gamma.variance,
            e.fraction_guaranteed,
            e.fraction_agree,
            e.boundary_ties
        )?;
    }
    tol.flush()?;
    if let Some(r) = &cmp.final_report {
        r.save(&dir.join("tolerance.csv"), &dir.join("tolerance.json"))?;
    }
    for t in &cmp.runs {
        if !t.is_stopped() {
            save_model(t.model(), &dir.join(format!("model_{}.p16n", t.model().precision().name())))?;
        }
    }
    let summary = CompareSummary {
        runs: summaries,
        instability: cmp.runs.iter().filter_map(Trainer::instability).collect(),
        tolerance: &cmp.tolerance,
        final_tolerance: cmp.final_report.as_ref(),
        acc_gap: cmp.acc_gap(),
    };
    write_json(&dir.join("compare.json"), &summary)?;
    Ok(cmp)
}

/// Scan `function` over every finite binary16 value and write
/// `scan_<name>.json` and `scan_<name>.csv` into `output_dir`.
pub fn cmd_scan(function: ScanFunction, dedupe_signed_zero: bool, output_dir: &Path) -> Result<ScanReport> {
    let r = scan_function(function, dedupe_signed_zero);
    ensure_dir(output_dir)?;
    write_json(&output_dir.join(format!("scan_{}.json", function.name())), &r)?;
    let mut f = std::fs::File::create(output_dir.join(format!("scan_{}.csv", function.name())))?;
    writeln!(
        f,
        "function,count,compared,mean_abs_error,max_abs_error,mean_rel_error,mean_rel_error_nonzero_reference,\
         max_rel_error,zero_reference_count,overflow_count,underflow_count,nan_count"
    )?;
    writeln!(
        f,
        "{},{},{},{:e},{:e},{:e},{:e},{:e},{},{},{},{}",
        r.function,
        r.count,
        r.compared,
        r.mean_abs_error,
        r.max_abs_error,
        r.mean_rel_error,
        r.mean_rel_error_nonzero_reference,
        r.max_rel_error,
        r.zero_reference_count,
        r.overflow_count,
        r.underflow_count,
        r.nan_count
    )?;
    Ok(r)
}

/// Human-readable description of a model file.
#[derive(Clone, Debug, Serialize)]
pub struct ModelInfo {
    pub path: PathBuf,
    pub precision: Precision,
    pub input_shape: Vec<usize>,
    pub layers: Vec<crate::nn::LayerSummary>,
    pub param_count: usize,
    pub payload_bytes: usize,
    pub file_bytes: usize,
}

impl ModelInfo {
    pub fn of(path: &Path) -> Result<ModelInfo> {
        let model = load_model(path)?;
        let file_bytes = std::fs::metadata(path)?.len() as usize;
        let expected = model_file_size(&model);
        debug_assert_eq!(expected, file_bytes);
        let width = if model.precision() == Precision::Pure16 { 2 } else { 4 };
        Ok(ModelInfo {
            path: path.to_path_buf(),
            precision: model.precision(),
            input_shape: model.input_shape().to_vec(),
            layers: model.summary(),
            param_count: model.param_count(),
            payload_bytes: model.param_count() * width,
            file_bytes,
        })
    }
}

impl fmt::Display for ModelInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.path.display())?;
        writeln!(f, "  precision: {} (tag byte {})", self.precision.name(), self.precision.tag_byte())?;
        writeln!(f, "  input: {:?}", self.input_shape)?;
        for (i, l) in self.layers.iter().enumerate() {
            write!(f, "  [{i}] {:<10} -> {:?}", l.kind.name(), l.output_shape)?;
            if !l.param_shapes.is_empty() {
                write!(f, "  params {:?}", l.param_shapes)?;
            }
            writeln!(f)?;
        }
        writeln!(f, "  parameters: {}", self.param_count)?;
        writeln!(f, "  payload bytes: {}", self.payload_bytes)?;
        write!(f, "  file bytes: {}", self.file_bytes)
    }
}

/// Describe one or more model files. With two files, the payload and
/// whole-file size ratios of the first over the second are included.
pub fn cmd_model_info(paths: &[PathBuf]) -> Result<(Vec<ModelInfo>, Option<(f64, f64)>)> {
    let infos = paths.iter().map(|p| ModelInfo::of(p)).collect::<Result<Vec<_>>>()?;
    let ratio = match infos.as_slice() {
        [a, b] if b.payload_bytes > 0 => {
            Some((a.payload_bytes as f64 / b.payload_bytes as f64, a.file_bytes as f64 / b.file_bytes as f64))
        }
        _ => None,
    };
    Ok((infos, ratio))
}

/// Compare two saved models on the configured test set and write
/// `tolerance.csv` and `tolerance.json` into the output directory.
pub fn cmd_tolerance(reference: &Path, other: &Path, cfg: &ExperimentConfig) -> Result<ToleranceReport> {
    let m32 = load_model(reference)?;
    let m16 = load_model(other)?;
    let mut cfg = cfg.clone();
    cfg.input_shape = m32.input_shape().to_vec();
    let data = load_data(&cfg)?;
    let r = tolerance_report(&m32, &m16, &data.test.images()?, Some(data.test.labels()), cfg.eval_batch)?;
    ensure_dir(&cfg.output_dir)?;
    r.save(&cfg.output_dir.join("tolerance.csv"), &cfg.output_dir.join("tolerance.json"))?;
    Ok(r)
}
