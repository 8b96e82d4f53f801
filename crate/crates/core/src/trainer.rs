//! Mini-batch Adam training with L2 on weights, early stopping and
//! checkpoints.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::Dims;
use crate::config::RunConfig;
use crate::data::{Dataset, Window};
use crate::error::{Error, Result};
use crate::init::{seeded, ModelRng, RngState};
use crate::model::{Dropout, Model, VariantKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub dropout: f64,
    pub d_per_variable: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 0.001,
            l2_lambda: 0.001,
            dropout: 0.5,
            d_per_variable: 10,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("train.{field} {why}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be a non-negative number");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda", "must be a non-negative number");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if self.d_per_variable == 0 {
            return bad("d_per_variable", "must be positive");
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1");
        }
        Ok(())
    }
}

/// Whether a parameter takes part in the L2 penalty. Biases (names whose last
/// segment starts with `b`) do not.
pub fn is_weight(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    !last.starts_with('b')
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { v: m.clone(), m, t: 0 }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "Adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powf(self.t as f64);
        let c2 = 1.0 - ADAM_BETA2.powf(self.t as f64);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::contract(format!(
                    "Adam shape mismatch: param {:?}, grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Worker pool of the given width; `threads == 0` means one per core.
pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

/// `λ Σ ‖W‖²` over weights, and its gradient added into `grads`.
fn l2_penalty(model: &Model, lambda: f64, grads: Option<&mut [Tensor]>) -> f64 {
    let named = model.named_params();
    let mut total = 0.0;
    let mut grads = grads;
    for (i, (name, t)) in named.iter().enumerate() {
        if !is_weight(name) {
            continue;
        }
        total += t.data().iter().map(|w| w * w).sum::<f64>();
        if let Some(g) = grads.as_deref_mut() {
            for (gi, wi) in g[i].data_mut().iter_mut().zip(t.data()) {
                *gi += 2.0 * lambda * wi;
            }
        }
    }
    lambda * total
}

/// Summed per-sequence loss plus the L2 term, without dropout.
pub fn batch_loss(model: &Model, windows: &[&Window], lambda: f64) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let mut total = 0.0;
    for w in windows {
        let mut tape = crate::autodiff::Tape::new();
        let vars = model.register(&mut tape);
        let out = model.sequence_forward(&mut tape, &vars, &w.inputs, w.target, None)?;
        total += tape.value(out.loss).item()?;
    }
    Ok(total + l2_penalty(model, lambda, None))
}

/// Sequences per partial gradient sum in [`batch_loss_and_grad`].
const REDUCE_CHUNK: usize = 8;

fn add_into(acc: &mut [Tensor], g: &[Tensor]) {
    for (a, gi) in acc.iter_mut().zip(g) {
        for (x, y) in a.data_mut().iter_mut().zip(gi.data()) {
            *x += y;
        }
    }
}

/// Batch loss and its gradient. Sequences run on `pool` in fixed chunks of
/// consecutive windows; each chunk sums its gradients in order and chunk sums
/// are added in order, so the result does not depend on the pool width. With
/// `dropout`, each sequence gets its own generator seeded from the matching
/// entry of `seeds`.
pub fn batch_loss_and_grad(
    model: &Model,
    windows: &[&Window],
    lambda: f64,
    dropout: Option<(f64, &[u64])>,
    pool: &rayon::ThreadPool,
) -> Result<(f64, Vec<Tensor>)> {
    if windows.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let one = |i: usize, w: &Window| match dropout {
        Some((rate, seeds)) if rate > 0.0 => {
            let mut rng = seeded(seeds[i]);
            let d = Dropout { rate, rng: &mut rng };
            model.sequence_gradients(&w.inputs, w.target, Some(d))
        }
        _ => model.sequence_gradients(&w.inputs, w.target, None),
    };
    let partials: Vec<Result<(f64, Vec<Tensor>)>> = pool.install(|| {
        windows
            .par_chunks(REDUCE_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut loss = 0.0;
                let mut acc: Option<Vec<Tensor>> = None;
                for (j, w) in chunk.iter().enumerate() {
                    let (l, g) = one(c * REDUCE_CHUNK + j, w)?;
                    loss += l;
                    match acc.as_mut() {
                        None => acc = Some(g),
                        Some(acc) => add_into(acc, &g),
                    }
                }
                Ok((loss, acc.expect("chunks are nonempty")))
            })
            .collect()
    });
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for r in partials {
        let (l, g) = r?;
        loss += l;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => add_into(acc, &g),
        }
    }
    let mut grads = grads.expect("batch is nonempty");
    loss += l2_penalty(model, lambda, Some(&mut grads));
    Ok((loss, grads))
}

/// Normalized point forecasts for each window, in window order.
pub fn predict_windows(model: &Model, windows: &[&Window], pool: &rayon::ThreadPool) -> Result<Vec<f64>> {
    pool.install(|| windows.par_iter().map(|w| model.predict(&w.inputs)).collect())
}

/// RMSE in original units of the target.
pub fn rmse_original(model: &Model, dataset: &Dataset, windows: &[&Window], pool: &rayon::ThreadPool) -> Result<f64> {
    let preds = predict_windows(model, windows, pool)?;
    let y: Vec<f64> = windows.iter().map(|w| dataset.denormalize_target(w.target)).collect();
    let yhat: Vec<f64> = preds.iter().map(|&z| dataset.denormalize_target(z)).collect();
    crate::interpret::rmse(&y, &yhat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_rmse: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters with the best validation RMSE (the initial ones if no epoch
    /// improved on them).
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_rmse: f64,
    /// Generator state after the last epoch.
    pub rng: ModelRng,
}

/// Train a fresh model of `kind` on `dataset.train`, early-stopping on
/// `dataset.valid`.
pub fn fit(kind: VariantKind, dataset: &Dataset, config: &TrainConfig, threads: usize) -> Result<FitResult> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.valid.is_empty() {
        return Err(Error::Config("train and valid splits must both contain windows".into()));
    }
    let pool = pool(threads)?;
    let mut rng = seeded(config.seed);
    let dims = Dims::new(dataset.n_vars(), config.d_per_variable);
    let mut model = Model::init(kind, dims, &mut rng);
    let mut adam = AdamState::new(model.named_params().into_iter().map(|(_, t)| t));
    let valid: Vec<&Window> = dataset.valid.iter().collect();

    let mut best_model = model.clone();
    let mut best_valid_rmse = rmse_original(&model, dataset, &valid, &pool)?;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Window> = chunk.iter().map(|&i| &dataset.train[i]).collect();
            let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.random()).collect();
            let (loss, grads) =
                batch_loss_and_grad(&model, &batch, config.l2_lambda, Some((config.dropout, &seeds)), &pool)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!(
                    "epoch {epoch}, batch {b} (first window ends at row {}): loss {loss}",
                    batch[0].end
                )));
            }
            adam.step(model.params_mut(), &grads, config.learning_rate)?;
            total += loss;
        }
        let valid_rmse = rmse_original(&model, dataset, &valid, &pool)?;
        log.push(EpochRecord {
            epoch,
            train_loss: total / dataset.train.len() as f64,
            valid_rmse,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        log::info!(
            "epoch {epoch}: train loss {:.6}, valid RMSE {valid_rmse:.6}",
            total / dataset.train.len() as f64
        );
        if valid_rmse < best_valid_rmse {
            best_valid_rmse = valid_rmse;
            best_model = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(FitResult {
        model: best_model,
        log,
        best_epoch,
        best_valid_rmse,
        rng,
    })
}

/// Training log as CSV text with header `epoch,train_loss,valid_rmse,wall_ms`.
pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,valid_rmse,wall_ms\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.valid_rmse, r.wall_ms
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub variant: VariantKind,
    pub config: RunConfig,
    pub rng_state: RngState,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn new(model: &Model, config: &RunConfig, rng: &ModelRng) -> Self {
        let tensors = model
            .named_params()
            .into_iter()
            .map(|(name, t)| {
                let record = TensorRecord {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                };
                (name, record)
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT,
            variant: model.kind(),
            config: config.clone(),
            rng_state: RngState::capture(rng),
            tensors,
        }
    }

    pub fn model(&self) -> Result<Model> {
        let tensors = self
            .tensors
            .iter()
            .map(|(name, r)| Ok((name.clone(), Tensor::new(r.shape.clone(), r.data.clone())?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Model::from_named(self.variant, tensors)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            message: format!("not a valid checkpoint: {e}"),
        })?;
        if ck.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Data {
                path: path.to_path_buf(),
                message: format!("unsupported checkpoint format {}", ck.format_version),
            });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_names() {
        assert!(is_weight("cell.wh"));
        assert!(is_weight("head.wo"));
        assert!(is_weight("lstm.w_gate"));
        assert!(!is_weight("cell.bj"));
        assert!(!is_weight("cell3.b_gate"));
        assert!(!is_weight("fusion.b_out"));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Tensor::full(&[3], 0.5);
        let mut adam = AdamState::new([&p]);
        adam.step(vec![&mut p], &[Tensor::full(&[3], 1.0)], 0.01).unwrap();
        for &v in p.data() {
            assert!((0.5 - v - 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = Tensor::full(&[2, 2], -1.25);
        let before = p.clone();
        let mut adam = AdamState::new([&p]);
        adam.step(vec![&mut p], &[Tensor::zeros(&[2, 2])], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("patience"));
    }
}
