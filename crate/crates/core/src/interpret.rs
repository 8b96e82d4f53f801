//! Forecast metrics, attention collection, variable importance and attention
//! histograms.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, Window};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::trainer::predict_windows;

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() || y.len() != yhat.len() {
        return Err(Error::contract(format!(
            "metrics need equal nonempty inputs, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let sq: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let abs: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();
    Ok(abs / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub n: usize,
}

impl Metrics {
    pub fn from_predictions(y: &[f64], yhat: &[f64]) -> Result<Self> {
        Ok(Self {
            rmse: rmse(y, yhat)?,
            mae: mae(y, yhat)?,
            n: y.len(),
        })
    }
}

fn nonempty(dataset: &Dataset, split: Split) -> Result<Vec<&Window>> {
    let windows = dataset.windows(split);
    if windows.is_empty() {
        return Err(Error::Config(format!("the {split} split has no windows")));
    }
    Ok(windows)
}

fn original_targets(dataset: &Dataset, windows: &[&Window]) -> Vec<f64> {
    windows.iter().map(|w| dataset.denormalize_target(w.target)).collect()
}

/// Model metrics in original units.
pub fn evaluate(model: &Model, dataset: &Dataset, split: Split, pool: &rayon::ThreadPool) -> Result<Metrics> {
    if model.n_inputs() != dataset.n_vars() {
        return Err(Error::Mismatch(format!(
            "model expects {} variables, data has {}",
            model.n_inputs(),
            dataset.n_vars()
        )));
    }
    let windows = nonempty(dataset, split)?;
    let preds = predict_windows(model, &windows, pool)?;
    let yhat: Vec<f64> = preds.iter().map(|&z| dataset.denormalize_target(z)).collect();
    Metrics::from_predictions(&original_targets(dataset, &windows), &yhat)
}

/// Predicts the training-split mean of the target for every window.
pub fn mean_baseline(dataset: &Dataset, split: Split) -> Result<Metrics> {
    let windows = nonempty(dataset, split)?;
    let t = dataset.target_index();
    let mean = dataset.normalizer.mean[t];
    let y = original_targets(dataset, &windows);
    Metrics::from_predictions(&y, &vec![mean; y.len()])
}

/// Predicts the last observed target value: `ŷ_{T+1} = y_T`.
pub fn persistence_baseline(dataset: &Dataset, split: Split) -> Result<Metrics> {
    let windows = nonempty(dataset, split)?;
    let (n, t) = (dataset.n_vars(), dataset.target_index());
    let yhat: Vec<f64> = windows
        .iter()
        .map(|w| {
            let last = w.inputs.data()[w.inputs.len() - n + t];
            dataset.denormalize_target(last)
        })
        .collect();
    Metrics::from_predictions(&original_targets(dataset, &windows), &yhat)
}

/// Prior and posterior variable attention for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
}

/// Attention for every window, dropout off. Only mixture variants have it.
pub fn collect_attention(model: &Model, windows: &[&Window], pool: &rayon::ThreadPool) -> Result<Vec<AttentionRecord>> {
    if !model.kind().has_mixture() {
        return Err(Error::Config(format!(
            "the {} variant has no prior/posterior attention",
            model.kind()
        )));
    }
    pool.install(|| {
        windows
            .par_iter()
            .map(|w| {
                let out = model
                    .mixture_output(&w.inputs, w.target)?
                    .expect("mixture variants yield attention");
                Ok(AttentionRecord {
                    prior: out.prior.into_data(),
                    posterior: out.posterior.into_data(),
                })
            })
            .collect()
    })
}

/// Mean posterior per variable. Since every posterior sums to one, this is
/// `Σ_m post_m(n) / Σ_k Σ_m post_m(k)`.
pub fn importance(posteriors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = posteriors
        .first()
        .ok_or_else(|| Error::contract("importance needs at least one sequence"))?;
    let n = first.len();
    let mut sums = vec![0.0; n];
    for p in posteriors {
        if p.len() != n {
            return Err(Error::contract("posteriors differ in length"));
        }
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    let m = posteriors.len() as f64;
    Ok(sums.into_iter().map(|s| s / m).collect())
}

/// Variable indices by descending score; ties go to the lower index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Prior,
    Posterior,
}

impl AttentionKind {
    fn as_str(self) -> &'static str {
        match self {
            Self::Prior => "prior",
            Self::Posterior => "posterior",
        }
    }
}

/// Counts over `bins` equal bins of `[0, 1]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub variable: String,
    pub kind: AttentionKind,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn bin_index(value: f64, bins: usize) -> usize {
    ((value * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Prior and posterior histograms for every variable.
pub fn histograms(records: &[AttentionRecord], names: &[String], bins: usize) -> Result<Vec<Histogram>> {
    if bins < 2 {
        return Err(Error::Config(format!("bins must be at least 2, got {bins}")));
    }
    let edges: Vec<f64> = (0..=bins).map(|k| k as f64 / bins as f64).collect();
    let mut out = Vec::with_capacity(2 * names.len());
    for (v, name) in names.iter().enumerate() {
        for kind in [AttentionKind::Prior, AttentionKind::Posterior] {
            let mut counts = vec![0; bins];
            for r in records {
                let value = match kind {
                    AttentionKind::Prior => r.prior[v],
                    AttentionKind::Posterior => r.posterior[v],
                };
                counts[bin_index(value, bins)] += 1;
            }
            out.push(Histogram {
                variable: name.clone(),
                kind,
                edges: edges.clone(),
                counts,
            });
        }
    }
    Ok(out)
}

/// CSV with columns `variable,kind,bin_lo,bin_hi,count`.
pub fn histograms_csv(hists: &[Histogram]) -> String {
    let mut out = String::from("variable,kind,bin_lo,bin_hi,count\n");
    for h in hists {
        for (k, count) in h.counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{count}",
                h.variable,
                h.kind.as_str(),
                h.edges[k],
                h.edges[k + 1]
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub variables: Vec<String>,
    pub importance: Vec<f64>,
    /// Variable names, most important first.
    pub ranking: Vec<String>,
    pub split: Split,
    pub n_sequences: usize,
    /// SHA-256 of the checkpoint file the report was computed from.
    pub checkpoint_sha256: String,
    pub histograms: Vec<Histogram>,
}

/// Importance, ranking and histograms over the windows of `split`.
pub fn importance_report(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    bins: usize,
    checkpoint_sha256: String,
    pool: &rayon::ThreadPool,
) -> Result<ImportanceReport> {
    if bins < 2 {
        return Err(Error::Config(format!("bins must be at least 2, got {bins}")));
    }
    if model.n_inputs() != dataset.n_vars() {
        return Err(Error::Mismatch(format!(
            "model expects {} variables, data has {}",
            model.n_inputs(),
            dataset.n_vars()
        )));
    }
    let windows = nonempty(dataset, split)?;
    let records = collect_attention(model, &windows, pool)?;
    let posteriors: Vec<Vec<f64>> = records.iter().map(|r| r.posterior.clone()).collect();
    let imp = importance(&posteriors)?;
    let ranking = ranking(&imp).into_iter().map(|i| dataset.names[i].clone()).collect();
    Ok(ImportanceReport {
        variables: dataset.names.clone(),
        importance: imp,
        ranking,
        split,
        n_sequences: records.len(),
        checkpoint_sha256,
        histograms: histograms(&records, &dataset.names, bins)?,
    })
}
