use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use p16::analysis::ScanFunction;
use p16::experiment::{cmd_compare, cmd_model_info, cmd_scan, cmd_tolerance, cmd_train, ExperimentConfig};
use p16::optim::OptimizerKind;
use p16::{LayerKind, Precision};

/// Train and compare small networks in emulated binary16, binary32 and mixed precision.
#[derive(Parser)]
#[command(name = "p16", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics and the model file.
    Train(ConfigArgs),
    /// Train Pure32 and Pure16 from one seed and compare them.
    Compare(ConfigArgs),
    /// Evaluate a function on every finite binary16 value against binary32.
    Scan {
        function: ScanFunction,
        /// Count +0 and -0 as two inputs.
        #[arg(long)]
        keep_signed_zero: bool,
        #[arg(long = "output_dir", alias = "output-dir", default_value = "runs")]
        output_dir: PathBuf,
    },
    /// Describe model files; with two files, print their size ratios.
    #[command(name = "model-info")]
    ModelInfo {
        #[arg(required = true, num_args = 1..=2)]
        paths: Vec<PathBuf>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Compare two saved models on the test set.
    Tolerance {
        reference: PathBuf,
        other: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// A sample count, or "all".
#[derive(Clone, Copy)]
struct Subset(Option<usize>);

fn parse_subset(s: &str) -> Result<Subset, String> {
    if s.eq_ignore_ascii_case("all") {
        Ok(Subset(None))
    } else {
        s.parse().map(|n| Subset(Some(n))).map_err(|e| format!("{e}"))
    }
}

#[derive(Clone)]
struct Shape(Vec<usize>);

fn parse_shape(s: &str) -> Result<Shape, String> {
    s.split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("{d:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Shape)
}

#[derive(Clone)]
struct Architecture(Vec<LayerKind>);

fn parse_architecture(s: &str) -> Result<Architecture, String> {
    serde_json::from_str(s).map(Architecture).map_err(|e| e.to_string())
}

/// A JSON config file plus one override flag per config field.
#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Layer list as JSON, e.g. '[{"type":"dense","inputs":784,"outputs":10},{"type":"softmax"}]'.
    #[arg(long, value_parser = parse_architecture)]
    architecture: Option<Architecture>,
    /// Per-sample input shape, e.g. 784 or 1,28,28.
    #[arg(long = "input_shape", alias = "input-shape", value_parser = parse_shape)]
    input_shape: Option<Shape>,
    /// pure16, pure32 or mixed.
    #[arg(long)]
    precision: Option<Precision>,
    /// sgd, rmsprop or adam.
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    beta: Option<f32>,
    #[arg(long)]
    beta1: Option<f32>,
    #[arg(long)]
    beta2: Option<f32>,
    #[arg(long)]
    eps: Option<f32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch_size", alias = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "data_dir", alias = "data-dir")]
    data_dir: Option<PathBuf>,
    /// Number of training samples, or "all".
    #[arg(long = "train_subset", alias = "train-subset", value_parser = parse_subset)]
    train_subset: Option<Subset>,
    /// Number of test samples, or "all".
    #[arg(long = "test_subset", alias = "test-subset", value_parser = parse_subset)]
    test_subset: Option<Subset>,
    #[arg(long = "output_dir", alias = "output-dir")]
    output_dir: Option<PathBuf>,
    #[arg(long = "include_mixed", alias = "include-mixed")]
    include_mixed: Option<bool>,
    #[arg(long = "eval_batch", alias = "eval-batch")]
    eval_batch: Option<usize>,
}

impl ConfigArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_path(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(precision, optimizer, lr, beta, beta1, beta2, eps, epochs, batch_size, seed);
        set!(output_dir, include_mixed, eval_batch);
        if let Some(Architecture(a)) = self.architecture {
            c.architecture = a;
        }
        if let Some(Shape(s)) = self.input_shape {
            c.input_shape = s;
        }
        if let Some(Subset(n)) = self.train_subset {
            c.train_subset = n;
        }
        if let Some(Subset(n)) = self.test_subset {
            c.test_subset = n;
        }
        if let Some(d) = self.data_dir {
            c.data_dir = Some(d);
        }
        c.validate()?;
        Ok(c)
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("P16_THREADS") {
        let n: usize = v.parse().with_context(|| format!("P16_THREADS={v:?} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = cmd_train(&cfg)?;
            for m in &out.history {
                println!(
                    "epoch {:>3}  train_acc {}  test_acc {}  train_loss {:.4}  test_loss {:.4}  {:.1}s",
                    m.epoch,
                    pct(m.train_acc),
                    pct(m.test_acc),
                    m.train_loss,
                    m.test_loss,
                    m.wall_time
                );
            }
            println!("metrics: {}", out.metrics_csv.display());
            println!("model: {}", out.model.display());
        }
        Command::Compare(args) => {
            let cfg = args.resolve()?;
            let cmp = cmd_compare(&cfg)?;
            for t in &cmp.runs {
                let name = t.model().precision().name();
                for m in t.history() {
                    println!(
                        "{name:<7} epoch {:>3}  test_acc {}  test_loss {:.4}",
                        m.epoch,
                        pct(m.test_acc),
                        m.test_loss
                    );
                }
                if let Some(r) = t.instability() {
                    println!("{name:<7} {r}");
                }
            }
            for e in &cmp.tolerance {
                println!(
                    "{:<7} epoch {:>3}  mean delta {:.3e}  mean gamma {:.3e}  guaranteed {}  agree {}",
                    e.precision.name(),
                    e.epoch,
                    e.delta.mean,
                    e.gamma.mean,
                    pct(e.fraction_guaranteed),
                    pct(e.fraction_agree)
                );
            }
            if let Some(gap) = cmp.acc_gap() {
                println!("|acc16 - acc32| = {}", pct(gap));
            }
            println!("output: {}", cfg.output_dir.display());
        }
        Command::Scan { function, keep_signed_zero, output_dir } => {
            let r = cmd_scan(function, !keep_signed_zero, &output_dir)?;
            println!("{}: {} values, {} compared", r.function, r.count, r.compared);
            println!("  mean abs error {:.4e}  max {:.4e}", r.mean_abs_error, r.max_abs_error);
            println!(
                "  mean rel error {:.4e}  (nonzero reference only {:.4e})  max {:.4e}",
                r.mean_rel_error, r.mean_rel_error_nonzero_reference, r.max_rel_error
            );
            println!("  overflow {}  underflow {}  nan {}", r.overflow_count, r.underflow_count, r.nan_count);
        }
        Command::ModelInfo { paths, json } => {
            let (infos, ratio) = cmd_model_info(&paths)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&infos)?);
            } else {
                for i in &infos {
                    println!("{i}");
                }
            }
            if let Some((payload, file)) = ratio {
                println!("payload ratio: {payload}");
                println!("file size ratio: {file:.4}");
            }
        }
        Command::Tolerance { reference, other, config } => {
            let cfg = config.resolve()?;
            let r = cmd_tolerance(&reference, &other, &cfg)?;
            println!("{} inputs", r.count);
            println!("  delta mean {:.3e}  min {:.3e}  max {:.3e}", r.delta.mean, r.delta.min, r.delta.max);
            println!("  gamma mean {:.3e}  min {:.3e}  max {:.3e}", r.gamma.mean, r.gamma.min, r.gamma.max);
            println!("  guaranteed {}  agree {}", pct(r.fraction_guaranteed), pct(r.fraction_agree));
            if let Some(gap) = r.acc_gap {
                println!("  |acc16 - acc32| = {}", pct(gap));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
