use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use mvlstm::autodiff::GradcheckOptions;
use mvlstm::data::Split;
use mvlstm::pipeline;
use mvlstm::synthetic::GeneratorOptions;
use mvlstm::{Dims, Error, RunConfig, VariantKind};

/// Environment variable read for the log filter (`error`, `warn`, `info`, ...).
const LOG_ENV: &str = "MVLSTM_LOG";

/// Largest relative gradient error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "mvlstm", version, about = "Interpretable multi-variable LSTM forecasting")]
struct Cli {
    /// Worker threads for per-sequence work; 1 is the reproducible mode and
    /// 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the synthetic benchmark and write CSV plus ground-truth manifest.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint and per-epoch log.
    Train(TrainArgs),
    /// Compute RMSE and MAE of a checkpoint on one split.
    Eval(EvalArgs),
    /// Variable importance and attention histograms from a checkpoint.
    Interpret(InterpretArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulated steps; the first 100 are dropped as burn-in.
    #[arg(long, default_value_t = 5000)]
    length: usize,
    #[arg(long, default_value_t = 10)]
    n_exo: usize,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the CSV path with extension `manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, default_value = "checkpoint.json")]
    out_checkpoint: PathBuf,
    /// Defaults to the checkpoint path with extension `log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    target_column: Option<String>,
    #[arg(long = "window-t")]
    window_t: Option<usize>,
    #[arg(long)]
    difference: Option<bool>,
    #[arg(long)]
    fill_policy: Option<String>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    d_per_variable: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InterpretArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Importance report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the report path with extension `histograms.csv`.
    #[arg(long)]
    histograms: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// A variant name, or `all`.
    #[arg(long, default_value = "mvlstm")]
    variant: String,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 5)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Added to every analytic gradient before comparing; for checking that
    /// a wrong gradient is reported.
    #[arg(long, hide = true, default_value_t = 0.0)]
    corrupt: f64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn generate(args: GenerateArgs) -> Result<(), Failure> {
    if args.n_exo == 0 {
        return Err(usage("--n-exo must be positive: the target needs exogenous variables"));
    }
    let options = GeneratorOptions::new(args.n_exo, args.length, args.seed);
    let manifest = args
        .manifest
        .unwrap_or_else(|| with_extension(&args.out, "manifest.json"));
    let g = pipeline::generate(&options, &args.out, &manifest)?;
    println!(
        "wrote {} rows x {} columns to {} (manifest {})",
        g.series.len(),
        g.series.n_vars(),
        args.out.display(),
        manifest.display()
    );
    Ok(())
}

fn set(obj: &mut Value, section: &str, key: &str, value: Value) {
    let root = obj.as_object_mut().expect("config root is an object");
    let entry = root
        .entry(section.to_string())
        .or_insert_with(|| Value::Object(Map::new()));
    if let Some(map) = entry.as_object_mut() {
        map.insert(key.to_string(), value);
    }
}

fn run_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut value = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => json!({}),
    };
    if !value.is_object() {
        return Err(usage("configuration must be a JSON object"));
    }
    if let Some(v) = &args.variant {
        v.parse::<VariantKind>()?;
        value.as_object_mut().unwrap().insert("variant".into(), json!(v));
    }
    if let Some(v) = &args.target_column {
        set(&mut value, "data", "target_column", json!(v));
    }
    if let Some(v) = args.window_t {
        set(&mut value, "data", "window_T", json!(v));
    }
    if let Some(v) = args.difference {
        set(&mut value, "data", "difference", json!(v));
    }
    if let Some(v) = &args.fill_policy {
        set(&mut value, "data", "fill_policy", json!(v));
    }
    if let Some(v) = args.stride {
        set(&mut value, "data", "stride", json!(v));
    }
    let train = [
        ("batch_size", args.batch_size.map(|v| json!(v))),
        ("learning_rate", args.learning_rate.map(|v| json!(v))),
        ("l2_lambda", args.l2_lambda.map(|v| json!(v))),
        ("dropout", args.dropout.map(|v| json!(v))),
        ("d_per_variable", args.d_per_variable.map(|v| json!(v))),
        ("max_epochs", args.max_epochs.map(|v| json!(v))),
        ("patience", args.patience.map(|v| json!(v))),
        ("seed", args.seed.map(|v| json!(v))),
    ];
    for (key, v) in train {
        if let Some(v) = v {
            set(&mut value, "train", key, v);
        }
    }
    Ok(RunConfig::from_json(&value.to_string())?)
}

fn train(args: TrainArgs, threads: usize) -> Result<(), Failure> {
    let config = run_config(&args)?;
    let log = args
        .log
        .clone()
        .unwrap_or_else(|| with_extension(&args.out_checkpoint, "log.csv"));
    let outcome = pipeline::train(&config, &args.data, &args.out_checkpoint, &log, threads)?;
    println!(
        "{} epochs, best epoch {}, valid RMSE {}",
        outcome.log.len(),
        outcome.best_epoch,
        outcome.best_valid_rmse
    );
    println!("checkpoint {}, log {}", args.out_checkpoint.display(), log.display());
    Ok(())
}

fn eval(args: EvalArgs, threads: usize) -> Result<(), Failure> {
    let split: Split = args.split.parse()?;
    let report = pipeline::eval(&args.checkpoint, &args.data, split, args.out.as_deref(), threads)?;
    let m = report.metrics;
    println!("{}", json!({"rmse": m.rmse, "mae": m.mae, "n": m.n}));
    Ok(())
}

fn interpret(args: InterpretArgs, threads: usize) -> Result<(), Failure> {
    let split: Split = args.split.parse()?;
    if args.bins < 2 {
        return Err(usage(format!("--bins must be at least 2, got {}", args.bins)));
    }
    let hist = args
        .histograms
        .clone()
        .unwrap_or_else(|| with_extension(&args.out, "histograms.csv"));
    let full = pipeline::interpret(
        &args.checkpoint,
        &args.data,
        split,
        args.bins,
        &args.out,
        &hist,
        threads,
    )?;
    let r = &full.report;
    for name in &r.ranking {
        let i = r
            .variables
            .iter()
            .position(|v| v == name)
            .expect("ranked name is a variable");
        println!("{name}\t{:.6}", r.importance[i]);
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let kinds: Vec<VariantKind> = if args.variant == "all" {
        VariantKind::ALL.to_vec()
    } else {
        vec![args.variant.parse()?]
    };
    if args.n == 0 || args.d == 0 || args.t < 2 {
        return Err(usage("gradcheck needs --n >= 1, --d >= 1 and --t >= 2"));
    }
    let options = GradcheckOptions {
        analytic_offset: args.corrupt,
        ..GradcheckOptions::default()
    };
    let mut worst: f64 = 0.0;
    for kind in kinds {
        let report = pipeline::gradcheck_model(kind, Dims::new(args.n, args.d), args.t, args.seed, options)?;
        println!("{kind}: max relative error {:e}", report.max_rel_error);
        worst = worst.max(report.max_rel_error);
        if report.max_rel_error.is_nan() {
            worst = f64::NAN;
        }
    }
    if !(worst <= GRADCHECK_TOLERANCE) {
        return Err(Failure::Runtime(format!(
            "gradient check failed: error {worst:e} exceeds {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let threads = cli.threads;
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a, threads),
        Command::Eval(a) => eval(a, threads),
        Command::Interpret(a) => interpret(a, threads),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
