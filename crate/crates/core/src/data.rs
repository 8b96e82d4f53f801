//! CSV ingestion, differencing, normalization, chronological splitting and
//! sliding windows.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillPolicy {
    /// Any blank or non-numeric cell is an error.
    Strict,
    /// Replace a bad cell with the previous row's value.
    Ffill,
}

/// Chronological train/valid/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [("train", self.train), ("valid", self.valid), ("test", self.test)];
        for (name, f) in parts {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("split.{name} must lie in [0, 1], got {f}")));
            }
        }
        if self.train <= 0.0 || self.valid <= 0.0 {
            return Err(Error::Config("split.train and split.valid must be positive".into()));
        }
        let total = self.train + self.valid + self.test;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// Row boundaries `(train_end, valid_end)` for a series of `len` rows.
    pub fn boundaries(&self, len: usize) -> (usize, usize) {
        let train_end = (self.train * len as f64).round() as usize;
        let valid_end = ((self.train + self.valid) * len as f64).round() as usize;
        (train_end.min(len), valid_end.min(len))
    }
}

/// Which part of the data an operation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
    All,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "valid" => Ok(Self::Valid),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!(
                "unknown split `{s}` (expected train, valid, test or all)"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Valid => "valid",
            Self::Test => "test",
            Self::All => "all",
        })
    }
}

/// Multivariate series with the target in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub names: Vec<String>,
    /// `[L, N]`.
    pub values: Tensor,
}

impl RawSeries {
    pub fn new(names: Vec<String>, values: Tensor) -> Result<Self> {
        if values.rank() != 2 || values.shape()[1] != names.len() {
            return Err(Error::contract(format!(
                "{} names for values of shape {:?}",
                names.len(),
                values.shape()
            )));
        }
        Ok(Self { names, values })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values.data()[row * self.n_vars() + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.get(r, col)).collect()
    }

    pub fn target_index(&self) -> usize {
        self.n_vars() - 1
    }

    fn rows(&self, start: usize, end: usize) -> Result<RawSeries> {
        let values = self.values.narrow(start, end - start)?;
        Ok(RawSeries {
            names: self.names.clone(),
            values,
        })
    }
}

/// Read a CSV with one header row. The column named `target_column` is moved
/// to the last position.
pub fn load_csv(path: &Path, target_column: &str, fill: FillPolicy) -> Result<RawSeries> {
    let data_err = |message: String| Error::Data {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| data_err(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target = header.iter().position(|h| h == target_column).ok_or_else(|| {
        data_err(format!(
            "no column named `{target_column}` (columns: {})",
            header.join(", ")
        ))
    })?;
    let n = header.len();
    let mut order: Vec<usize> = (0..n).filter(|&c| c != target).collect();
    order.push(target);

    let mut values = Vec::new();
    let mut previous: Option<Vec<f64>> = None;
    for (i, record) in reader.records().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let record = record.map_err(|e| data_err(e.to_string()))?;
        let mut row = Vec::with_capacity(n);
        for &c in &order {
            let cell = record.get(c).unwrap_or("").trim();
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            let value = match (parsed, fill, &previous) {
                (Some(v), _, _) => v,
                (None, FillPolicy::Ffill, Some(prev)) => prev[row.len()],
                (None, _, _) => {
                    let what = if cell.is_empty() { "blank" } else { "non-numeric" };
                    return Err(data_err(format!(
                        "{what} cell `{cell}` at line {line}, column `{}`",
                        header[c]
                    )));
                }
            };
            row.push(value);
        }
        values.extend_from_slice(&row);
        previous = Some(row);
    }
    let len = values.len() / n;
    if len == 0 {
        return Err(data_err("no data rows".into()));
    }
    let names = order.iter().map(|&c| header[c].clone()).collect();
    RawSeries::new(names, Tensor::new(vec![len, n], values)?)
}

/// Write a series as CSV. Values use the shortest representation that parses
/// back to the same `f64`.
pub fn write_csv(series: &RawSeries, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    writer.write_record(&series.names).map_err(csv_err)?;
    for row in series.values.data().chunks(series.n_vars()) {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// First-order difference of every column; identity when disabled.
pub fn difference(series: &RawSeries, enabled: bool) -> Result<RawSeries> {
    if !enabled {
        return Ok(series.clone());
    }
    let (len, n) = (series.len(), series.n_vars());
    if len < 2 {
        return Err(Error::contract(format!("cannot difference a series of length {len}")));
    }
    let src = series.values.data();
    let values = Tensor::from_fn(&[len - 1, n], |i| src[i + n] - src[i]);
    RawSeries::new(series.names.clone(), values)
}

/// Per-column z-score transform with statistics from the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Fit on every row of `train`. Constant columns get std 1.
    pub fn fit(train: &RawSeries) -> Result<Self> {
        let len = train.len();
        if len == 0 {
            return Err(Error::contract("cannot fit normalizer on zero rows"));
        }
        let mut mean = Vec::with_capacity(train.n_vars());
        let mut std = Vec::with_capacity(train.n_vars());
        for c in 0..train.n_vars() {
            let col = train.column(c);
            let m = col.iter().sum::<f64>() / len as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / len as f64;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, series: &RawSeries) -> Result<RawSeries> {
        self.map(series, |v, m, s| (v - m) / s)
    }

    pub fn inverse(&self, series: &RawSeries) -> Result<RawSeries> {
        self.map(series, |z, m, s| z * s + m)
    }

    pub fn inverse_value(&self, col: usize, z: f64) -> f64 {
        z * self.std[col] + self.mean[col]
    }

    fn map(&self, series: &RawSeries, f: impl Fn(f64, f64, f64) -> f64) -> Result<RawSeries> {
        let n = series.n_vars();
        if n != self.mean.len() {
            return Err(Error::Mismatch(format!(
                "normalizer has {} columns, series has {n}",
                self.mean.len()
            )));
        }
        let values = series
            .values
            .map_indexed(|i, v| f(v, self.mean[i % n], self.std[i % n]));
        RawSeries::new(series.names.clone(), values)
    }
}

/// One training example: `T` input rows and the following target value.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `[T, N]`.
    pub inputs: Tensor,
    pub target: f64,
    /// Row index of the target within the series the window was cut from.
    pub end: usize,
}

/// Sliding windows with stride 1: exactly `L − T` of them.
pub fn window(series: &RawSeries, t: usize) -> Result<Vec<Window>> {
    window_strided(series, t, 1)
}

/// Windows ending at rows `T, T+stride, …`; window ending at `p` holds rows
/// `p−T..p` as inputs and `values[p, target]` as target.
pub fn window_strided(series: &RawSeries, t: usize, stride: usize) -> Result<Vec<Window>> {
    if t < 2 {
        return Err(Error::contract(format!("window length must be at least 2, got {t}")));
    }
    if stride == 0 {
        return Err(Error::contract("stride must be positive"));
    }
    let len = series.len();
    if len < t + 1 {
        return Err(Error::contract(format!(
            "series of length {len} is too short for windows of {t}"
        )));
    }
    let target = series.target_index();
    (t..len)
        .step_by(stride)
        .map(|p| {
            Ok(Window {
                inputs: series.values.narrow(p - t, t)?,
                target: series.get(p, target),
                end: p,
            })
        })
        .collect()
}

/// Settings for turning a CSV into windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub target_column: String,
    #[serde(rename = "window_T")]
    pub window_t: usize,
    #[serde(default)]
    pub difference: bool,
    #[serde(default = "default_fill")]
    pub fill_policy: FillPolicy,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_fill() -> FillPolicy {
    FillPolicy::Strict
}

fn default_stride() -> usize {
    1
}

impl DataConfig {
    pub fn new(target_column: impl Into<String>, window_t: usize) -> Self {
        Self {
            target_column: target_column.into(),
            window_t,
            difference: false,
            fill_policy: FillPolicy::Strict,
            split: SplitSpec::default(),
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_t < 2 {
            return Err(Error::Config(format!(
                "window_T must be at least 2, got {}",
                self.window_t
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        if self.target_column.is_empty() {
            return Err(Error::Config("target_column must not be empty".into()));
        }
        self.split.validate()
    }
}

/// Normalized windows for each split, plus what is needed to map back to
/// original units.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub names: Vec<String>,
    pub normalizer: Normalizer,
    pub train: Vec<Window>,
    pub valid: Vec<Window>,
    pub test: Vec<Window>,
}

impl Dataset {
    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn target_index(&self) -> usize {
        self.names.len() - 1
    }

    /// Windows of one split, or all splits in chronological order.
    pub fn windows(&self, split: Split) -> Vec<&Window> {
        match split {
            Split::Train => self.train.iter().collect(),
            Split::Valid => self.valid.iter().collect(),
            Split::Test => self.test.iter().collect(),
            Split::All => self.train.iter().chain(&self.valid).chain(&self.test).collect(),
        }
    }

    /// Map a normalized target value to original units.
    pub fn denormalize_target(&self, z: f64) -> f64 {
        self.normalizer.inverse_value(self.target_index(), z)
    }
}

/// Difference (optionally), split chronologically, normalize with training
/// statistics and cut windows inside each split.
pub fn prepare(series: &RawSeries, config: &DataConfig) -> Result<Dataset> {
    config.validate()?;
    let series = difference(series, config.difference)?;
    let (train_end, valid_end) = config.split.boundaries(series.len());
    let t = config.window_t;
    let need = t + 1;
    let sizes = [train_end, valid_end - train_end];
    if sizes.iter().any(|&s| s < need) {
        return Err(Error::Config(format!(
            "series of {} rows leaves train/valid segments of {sizes:?} rows; each needs at least {need} for window_T = {t}",
            series.len()
        )));
    }
    let train_raw = series.rows(0, train_end)?;
    let normalizer = Normalizer::fit(&train_raw)?;
    let normalized = normalizer.transform(&series)?;
    let segment = |start: usize, end: usize| -> Result<Vec<Window>> {
        if end - start < need {
            return Ok(Vec::new());
        }
        let mut windows = window_strided(&normalized.rows(start, end)?, t, config.stride)?;
        for w in &mut windows {
            w.end += start;
        }
        Ok(windows)
    };
    Ok(Dataset {
        names: series.names.clone(),
        train: segment(0, train_end)?,
        valid: segment(train_end, valid_end)?,
        test: segment(valid_end, series.len())?,
        normalizer,
    })
}
