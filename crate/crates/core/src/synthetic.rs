//! Seeded synthetic benchmark: independent ARMA exogenous series and a target
//! driven by its own ARMA process plus nonlinear couplings to two of them.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::RawSeries;
use crate::error::{Error, Result};
use crate::init::{seeded, ModelRng};
use crate::tensor::Tensor;

/// Samples discarded at the start of every simulated series.
pub const BURN_IN: usize = 100;

/// Exogenous columns that drive the target.
pub const IMPORTANT: [usize; 2] = [2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaSpec {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub noise_std: f64,
}

impl ArmaSpec {
    pub fn p(&self) -> usize {
        self.phi.len()
    }

    pub fn q(&self) -> usize {
        self.theta.len()
    }

    /// Largest eigenvalue modulus of the AR companion matrix.
    pub fn spectral_radius(&self) -> f64 {
        let p = self.p();
        if p == 0 {
            return 0.0;
        }
        let companion = DMatrix::from_fn(p, p, |r, c| {
            if r == 0 {
                self.phi[c]
            } else if r == c + 1 {
                1.0
            } else {
                0.0
            }
        });
        companion
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stationary(&self) -> bool {
        self.spectral_radius() < 1.0
    }
}

/// AR coefficients from partial autocorrelations via the Durbin-Levinson
/// recursion. Any reflection coefficients in (−1, 1) give a stationary process.
pub fn ar_from_reflection(reflection: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(reflection.len());
    for &r in reflection {
        let prev = phi.clone();
        let k = prev.len();
        for j in 0..k {
            phi[j] = prev[j] - r * prev[k - 1 - j];
        }
        phi.push(r);
    }
    phi
}

/// Random stationary spec: orders uniform in {1,2,3}, reflection coefficients
/// uniform in (−0.9, 0.9), MA coefficients uniform in (−0.5, 0.5), unit noise.
pub fn randomize_spec(rng: &mut ModelRng) -> ArmaSpec {
    let p = rng.random_range(1..=3);
    let q = rng.random_range(1..=3);
    let reflection: Vec<f64> = (0..p).map(|_| rng.random_range(-0.9..0.9)).collect();
    let theta = (0..q).map(|_| rng.random_range(-0.5..0.5)).collect();
    ArmaSpec {
        phi: ar_from_reflection(&reflection),
        theta,
        noise_std: 1.0,
    }
}

/// Simulate from a zero state and keep everything, burn-in included.
fn simulate(spec: &ArmaSpec, length: usize, rng: &mut ModelRng) -> Vec<f64> {
    let mut x = vec![0.0; length];
    let mut eps = vec![0.0; length];
    for t in 0..length {
        eps[t] = spec.noise_std * rng.sample::<f64, _>(StandardNormal);
        let mut v = eps[t];
        for (i, phi) in spec.phi.iter().enumerate() {
            if t > i {
                v += phi * x[t - 1 - i];
            }
        }
        for (j, theta) in spec.theta.iter().enumerate() {
            if t > j {
                v += theta * eps[t - 1 - j];
            }
        }
        x[t] = v;
    }
    x
}

fn check_spec(spec: &ArmaSpec, length: usize) -> Result<()> {
    if !spec.is_stationary() {
        return Err(Error::contract(format!(
            "AR coefficients {:?} are not stationary (spectral radius {})",
            spec.phi,
            spec.spectral_radius()
        )));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::contract(format!(
            "noise_std must be non-negative, got {}",
            spec.noise_std
        )));
    }
    if length <= BURN_IN {
        return Err(Error::contract(format!(
            "length must exceed the burn-in of {BURN_IN}, got {length}"
        )));
    }
    Ok(())
}

/// Simulate `length` steps and return the `length − 100` after burn-in.
pub fn sample_arma(spec: &ArmaSpec, length: usize, rng: &mut ModelRng) -> Result<Tensor> {
    check_spec(spec, length)?;
    let x = simulate(spec, length, rng);
    Ok(Tensor::vector(x[BURN_IN..].to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    /// Index into the exogenous columns.
    pub source: usize,
    pub gain: f64,
    pub lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOptions {
    pub n_exo: usize,
    /// Simulated steps including burn-in.
    pub length: usize,
    pub seed: u64,
    /// Coupling gains are drawn uniformly from this closed range.
    pub gain_range: (f64, f64),
}

impl GeneratorOptions {
    pub fn new(n_exo: usize, length: usize, seed: u64) -> Self {
        Self {
            n_exo,
            length,
            seed,
            gain_range: (0.8, 1.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let needed = IMPORTANT.iter().max().unwrap() + 1;
        if self.n_exo < needed {
            return Err(Error::Config(format!(
                "n_exo must be at least {needed} so that variables 2 and 3 exist, got {}",
                self.n_exo
            )));
        }
        if self.length <= BURN_IN + 5 {
            return Err(Error::Config(format!(
                "length must exceed {} (burn-in plus maximum lag), got {}",
                BURN_IN + 5,
                self.length
            )));
        }
        let (lo, hi) = self.gain_range;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config(format!("invalid gain range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Ground truth written next to the generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n_exo: usize,
    pub length: usize,
    pub burn_in: usize,
    pub rows: usize,
    pub columns: Vec<String>,
    pub exogenous: Vec<ArmaSpec>,
    pub target: ArmaSpec,
    pub couplings: Vec<Coupling>,
    /// Column indices of the variables that drive the target.
    pub important: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub series: RawSeries,
    pub manifest: Manifest,
}

impl Generated {
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// `n_exo` exogenous ARMA columns `x0..`, then the target `y` with
/// `y_t = a_t + Σ g·tanh(x_{t−δ})` over the couplings, `a` its own ARMA draw.
pub fn generate_dataset(options: &GeneratorOptions) -> Result<Generated> {
    options.validate()?;
    let GeneratorOptions {
        n_exo,
        length,
        seed,
        gain_range: (lo, hi),
    } = *options;
    let mut rng = seeded(seed);
    let exogenous: Vec<ArmaSpec> = (0..n_exo).map(|_| randomize_spec(&mut rng)).collect();
    let target = randomize_spec(&mut rng);
    let couplings: Vec<Coupling> = IMPORTANT
        .iter()
        .map(|&source| {
            let gain = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            Coupling {
                source,
                gain,
                lag: rng.random_range(1..=5),
            }
        })
        .collect();

    let exo_paths: Vec<Vec<f64>> = exogenous.iter().map(|s| simulate(s, length, &mut rng)).collect();
    let mut y = simulate(&target, length, &mut rng);
    for t in BURN_IN..length {
        for c in &couplings {
            y[t] += c.gain * exo_paths[c.source][t - c.lag].tanh();
        }
    }

    let rows = length - BURN_IN;
    let width = n_exo + 1;
    let values = Tensor::from_fn(&[rows, width], |i| {
        let (r, c) = (i / width + BURN_IN, i % width);
        if c < n_exo {
            exo_paths[c][r]
        } else {
            y[r]
        }
    });
    let mut columns: Vec<String> = (0..n_exo).map(|i| format!("x{i}")).collect();
    columns.push("y".into());
    let series = RawSeries::new(columns.clone(), values)?;
    Ok(Generated {
        series,
        manifest: Manifest {
            seed,
            n_exo,
            length,
            burn_in: BURN_IN,
            rows,
            columns,
            exogenous,
            target,
            couplings,
            important: IMPORTANT.to_vec(),
        },
    })
}
