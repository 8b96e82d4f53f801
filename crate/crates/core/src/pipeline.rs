//! File-level steps: generate, train, eval, interpret and gradcheck.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{gradcheck_with, GradcheckOptions, GradcheckReport};
use crate::cell::Dims;
use crate::config::RunConfig;
use crate::data::{load_csv, prepare, write_csv, DataConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::init::seeded;
use crate::interpret::{evaluate, histograms_csv, importance_report, ImportanceReport, Metrics};
use crate::model::{Model, VariantKind};
use crate::synthetic::{generate_dataset, Generated, GeneratorOptions};
use crate::tensor::Tensor;
use crate::trainer::{fit, log_csv, pool, Checkpoint, EpochRecord};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Simulate the synthetic dataset and write its CSV and manifest.
pub fn generate(options: &GeneratorOptions, csv_out: &Path, manifest_out: &Path) -> Result<Generated> {
    let generated = generate_dataset(options)?;
    write_csv(&generated.series, csv_out)?;
    generated.write_manifest(manifest_out)?;
    Ok(generated)
}

pub fn load_dataset(config: &DataConfig, data: &Path) -> Result<Dataset> {
    let series = load_csv(data, &config.target_column, config.fill_policy)?;
    prepare(&series, config)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_rmse: f64,
}

/// Fit on `data` and write the checkpoint and the per-epoch log.
pub fn train(
    config: &RunConfig,
    data: &Path,
    checkpoint_out: &Path,
    log_out: &Path,
    threads: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = load_dataset(&config.data, data)?;
    let result = fit(config.variant, &dataset, &config.train, threads)?;
    let checkpoint = Checkpoint::new(&result.model, config, &result.rng);
    checkpoint.save(checkpoint_out)?;
    write(log_out, log_csv(&result.log))?;
    Ok(TrainOutcome {
        checkpoint,
        log: result.log,
        best_epoch: result.best_epoch,
        best_valid_rmse: result.best_valid_rmse,
    })
}

/// A checkpoint together with the dataset prepared by its own data settings.
pub struct Loaded {
    pub checkpoint: Checkpoint,
    pub model: Model,
    pub dataset: Dataset,
    pub sha256: String,
}

pub fn load_for_eval(checkpoint: &Path, data: &Path) -> Result<Loaded> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let dataset = load_dataset(&ck.config.data, data)?;
    if model.n_inputs() != dataset.n_vars() {
        return Err(Error::Mismatch(format!(
            "checkpoint was trained on {} variables, {} has {}",
            model.n_inputs(),
            data.display(),
            dataset.n_vars()
        )));
    }
    Ok(Loaded {
        sha256: sha256_file(checkpoint)?,
        checkpoint: ck,
        model,
        dataset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub split: Split,
    pub checkpoint_sha256: String,
    pub config: RunConfig,
}

pub fn eval(checkpoint: &Path, data: &Path, split: Split, out: Option<&Path>, threads: usize) -> Result<EvalReport> {
    let loaded = load_for_eval(checkpoint, data)?;
    let metrics = evaluate(&loaded.model, &loaded.dataset, split, &pool(threads)?)?;
    let report = EvalReport {
        metrics,
        split,
        checkpoint_sha256: loaded.sha256,
        config: loaded.checkpoint.config,
    };
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretReport {
    #[serde(flatten)]
    pub report: ImportanceReport,
    pub config: RunConfig,
}

/// Write the importance report (JSON) and attention histograms (CSV).
pub fn interpret(
    checkpoint: &Path,
    data: &Path,
    split: Split,
    bins: usize,
    report_out: &Path,
    histograms_out: &Path,
    threads: usize,
) -> Result<InterpretReport> {
    if bins < 2 {
        return Err(Error::Config(format!("bins must be at least 2, got {bins}")));
    }
    let loaded = load_for_eval(checkpoint, data)?;
    let report = importance_report(
        &loaded.model,
        &loaded.dataset,
        split,
        bins,
        loaded.sha256,
        &pool(threads)?,
    )?;
    write(histograms_out, histograms_csv(&report.histograms))?;
    let full = InterpretReport {
        report,
        config: loaded.checkpoint.config,
    };
    write_json(report_out, &full)?;
    Ok(full)
}

/// Finite-difference check of every parameter gradient of a randomly
/// initialised `kind` model on one random sequence of length `t`.
pub fn gradcheck_model(
    kind: VariantKind,
    dims: Dims,
    t: usize,
    seed: u64,
    options: GradcheckOptions,
) -> Result<GradcheckReport> {
    let mut rng = seeded(seed);
    let model = Model::init(kind, dims, &mut rng);
    let xs = Tensor::from_fn(&[t, dims.n], |_| rng.random_range(-1.0..1.0));
    let y: f64 = rng.random_range(-1.0..1.0);
    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, p)| p.clone()).collect();
    gradcheck_with(
        &params,
        |tape, vars| {
            let bound = model.bind(vars);
            Ok::<_, Error>(model.sequence_forward(tape, &bound, &xs, y, None)?.loss)
        },
        options,
    )
}
