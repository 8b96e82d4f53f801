//! Mixture temporal-and-variable attention.
//!
//! Temporal attention summarises each variable's hidden-state history into a
//! context vector; concatenated with the final hidden row this gives the
//! per-variable summary `h̃ⁿ ∈ R^{2d}`. Each summary drives one Gaussian
//! component `N(y | Wₒⁿ·h̃ⁿ + bₒⁿ, σ²)`, and a softmax over `tanh(W_v·h̃ⁿ + b_v)`
//! gives the mixing weights (the prior attention). The posterior attention is
//! the prior reweighted by each component's likelihood of the observed target.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::cell::Dims;
use crate::error::{Error, Result};
use crate::init::{glorot, ModelRng};
use crate::tensor::Tensor;

pub const HEAD_PARAM_NAMES: [&str; 6] = ["ws", "bs", "wv", "bv", "wo", "bo"];

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// Temporal attention weights `[N,d]`.
    pub ws: Tensor,
    /// Temporal attention bias `[N]`.
    pub bs: Tensor,
    /// Variable attention weights `[2d]`.
    pub wv: Tensor,
    /// Variable attention bias `[1]`.
    pub bv: Tensor,
    /// Component output weights `[N,2d]`.
    pub wo: Tensor,
    /// Component output bias `[N]`.
    pub bo: Tensor,
    /// Fixed component variance.
    pub sigma2: f64,
}

impl HeadParams {
    pub fn init(dims: Dims, rng: &mut ModelRng) -> Self {
        let Dims { n, d } = dims;
        Self {
            ws: glorot(&[n, d], rng),
            bs: Tensor::zeros(&[n]),
            wv: glorot(&[2 * d], rng),
            bv: Tensor::zeros(&[1]),
            wo: glorot(&[n, 2 * d], rng),
            bo: Tensor::zeros(&[n]),
            sigma2: 1.0,
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        let Dims { n, d } = dims;
        Self {
            ws: Tensor::zeros(&[n, d]),
            bs: Tensor::zeros(&[n]),
            wv: Tensor::zeros(&[2 * d]),
            bv: Tensor::zeros(&[1]),
            wo: Tensor::zeros(&[n, 2 * d]),
            bo: Tensor::zeros(&[n]),
            sigma2: 1.0,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.ws.shape()[0], self.ws.shape()[1])
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        let [ws, bs, wv, bv, wo, bo]: [Tensor; 6] = tensors
            .try_into()
            .map_err(|_| Error::contract("head needs exactly six tensors"))?;
        if ws.rank() != 2 {
            return Err(Error::Mismatch(format!("head ws has shape {:?}", ws.shape())));
        }
        let params = Self {
            ws,
            bs,
            wv,
            bv,
            wo,
            bo,
            sigma2: 1.0,
        };
        let expected = Self::zeros(params.dims());
        for ((name, got), (_, want)) in params.named().into_iter().zip(expected.named()) {
            if got.shape() != want.shape() {
                return Err(Error::Mismatch(format!(
                    "head {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(params)
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("ws", &self.ws),
            ("bs", &self.bs),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.ws,
            &mut self.bs,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
        ]
    }

    pub fn register(&self, tape: &mut Tape) -> HeadVars {
        let v: Vec<Var> = self.named().into_iter().map(|(_, t)| tape.param(t)).collect();
        self.bind(&v)
    }

    pub fn bind(&self, v: &[Var]) -> HeadVars {
        HeadVars {
            temporal: TemporalVars { ws: v[0], bs: v[1] },
            variable: VariableVars { wv: v[2], bv: v[3] },
            wo: v[4],
            bo: v[5],
            sigma2: self.sigma2,
        }
    }

    pub fn temporal_attention(&self, history: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let hist = tape.constant(history.clone());
        let out = temporal_attention(&mut tape, &p.temporal, hist)?;
        Ok(tape.value(out).clone())
    }

    pub fn component_means(&self, htilde: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let h = tape.constant(htilde.clone());
        let mu = component_means(&mut tape, p.wo, p.bo, h)?;
        Ok(tape.value(mu).clone())
    }

    pub fn prior_attention(&self, htilde: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let h = tape.constant(htilde.clone());
        let scores = variable_scores(&mut tape, &p.variable, h)?;
        Ok(tape.value(scores).softmax_rows()?)
    }

    pub fn mixture_forward(&self, history: &Tensor, y_next: f64) -> Result<MixtureOutput> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let hist = tape.constant(history.clone());
        let htilde = temporal_attention(&mut tape, &p.temporal, hist)?;
        let vars = mixture(&mut tape, &p, htilde, y_next)?;
        Ok(vars.output(&tape))
    }

    /// Weighted sum of component means; needs no target.
    pub fn predict(&self, history: &Tensor) -> Result<f64> {
        Ok(self.mixture_forward(history, 0.0)?.yhat)
    }
}

/// `ln N(y | mu, sigma2)`.
pub fn log_gaussian(y: f64, mu: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::contract(format!("variance must be positive, got {sigma2}")));
    }
    Ok(-0.5 * (LN_2PI + sigma2.ln()) - (y - mu).powi(2) / (2.0 * sigma2))
}

#[derive(Debug, Clone, Copy)]
pub struct TemporalVars {
    pub ws: Var,
    pub bs: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct VariableVars {
    pub wv: Var,
    pub bv: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub temporal: TemporalVars,
    pub variable: VariableVars,
    pub wo: Var,
    pub bo: Var,
    pub sigma2: f64,
}

/// `[T,N,d]` history to the context-enhanced summaries `H̃ ∈ R^{N×2d}`.
///
/// Scores cover the first `T−1` steps; the final hidden state is concatenated
/// with the attention-weighted context of those steps.
pub fn temporal_attention(tape: &mut Tape, p: &TemporalVars, history: Var) -> Result<Var> {
    let shape = tape.value(history).shape().to_vec();
    if shape.len() != 3 || shape[0] < 2 {
        return Err(Error::contract(format!(
            "temporal attention needs a [T>=2,N,d] history, got {shape:?}"
        )));
    }
    let steps = shape[0];
    let past = tape.narrow(history, 0, steps - 1)?;
    let last = tape.index0(history, steps - 1)?;
    let scores = tape.tensordot_scores(p.ws, past)?;
    let scores = tape.add_row_bias(scores, p.bs)?;
    let scores = tape.tanh(scores)?;
    let weights = tape.softmax_rows(scores)?;
    let context = tape.tensordot_seq(weights, past)?;
    Ok(tape.concat(&[last, context], 1)?)
}

/// `tanh(W_v·h̃ⁿ + b_v)` for every variable; the prior is their softmax.
pub fn variable_scores(tape: &mut Tape, p: &VariableVars, htilde: Var) -> Result<Var> {
    let raw = tape.matmul(htilde, p.wv)?;
    let raw = tape.add_scalar(raw, p.bv)?;
    Ok(tape.tanh(raw)?)
}

pub fn component_means(tape: &mut Tape, wo: Var, bo: Var, htilde: Var) -> Result<Var> {
    let mu = tape.row_dot(wo, htilde)?;
    Ok(tape.add(mu, bo)?)
}

/// Inverted dropout on `H̃`: kept entries are scaled by `1/(1−rate)`.
pub fn dropout(tape: &mut Tape, input: Var, rate: f64, rng: &mut ModelRng) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(input);
    }
    let keep = 1.0 - rate;
    let shape = tape.value(input).shape().to_vec();
    let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
    let mask = tape.constant(mask);
    Ok(tape.mul(input, mask)?)
}

#[derive(Debug, Clone, Copy)]
pub struct MixtureVars {
    pub htilde: Var,
    pub mu: Var,
    pub log_prior: Var,
    pub log_density: Var,
    /// `ln p(y | X)`, shape `[1]`.
    pub loglik: Var,
}

/// Mixture log-likelihood of `y_next` given the summaries, in log space.
pub fn mixture(tape: &mut Tape, p: &HeadVars, htilde: Var, y_next: f64) -> Result<MixtureVars> {
    let n = tape.value(htilde).shape()[0];
    let mu = component_means(tape, p.wo, p.bo, htilde)?;
    let scores = variable_scores(tape, &p.variable, htilde)?;
    let log_prior = tape.log_softmax(scores)?;
    let target = tape.constant(Tensor::full(&[n], y_next));
    let resid = tape.sub(mu, target)?;
    let sq = tape.square(resid)?;
    let sigma2 = p.sigma2;
    let log_density = tape.affine(sq, -0.5 / sigma2, -0.5 * (LN_2PI + sigma2.ln()))?;
    let joint = tape.add(log_prior, log_density)?;
    let loglik = tape.logsumexp(joint)?;
    Ok(MixtureVars {
        htilde,
        mu,
        log_prior,
        log_density,
        loglik,
    })
}

impl MixtureVars {
    pub fn output(&self, tape: &Tape) -> MixtureOutput {
        let mu = tape.value(self.mu).clone();
        let log_prior = tape.value(self.log_prior);
        let prior = log_prior.exp();
        let loglik = tape.value(self.loglik).data()[0];
        let posterior = log_prior
            .add(tape.value(self.log_density))
            .expect("shapes fixed by construction")
            .map(|v| (v - loglik).exp());
        let yhat = prior.dot(&mu).expect("shapes fixed by construction");
        MixtureOutput {
            mu,
            prior,
            loglik,
            posterior,
            yhat,
            htilde: tape.value(self.htilde).clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOutput {
    /// Component means `[N]`.
    pub mu: Tensor,
    /// Prior attention `p(z=n | X)`.
    pub prior: Tensor,
    pub loglik: f64,
    /// Posterior attention `p(z=n | X, y)`.
    pub posterior: Tensor,
    pub yhat: f64,
    pub htilde: Tensor,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded;

    fn random(shape: &[usize], rng: &mut ModelRng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn two_step_history_attends_to_first_state() {
        let dims = Dims::new(3, 2);
        let mut rng = seeded(1);
        let head = HeadParams::init(dims, &mut rng);
        let history = random(&[2, 3, 2], &mut rng);
        let htilde = head.temporal_attention(&history).unwrap();
        let expected = Tensor::concat(&[&history.index0(1).unwrap(), &history.index0(0).unwrap()], 1).unwrap();
        assert_eq!(htilde, expected);
    }

    #[test]
    fn constant_history_gives_uniform_weights() {
        let dims = Dims::new(2, 3);
        let mut rng = seeded(2);
        let head = HeadParams::init(dims, &mut rng);
        let frame = random(&[2, 3], &mut rng);
        let history = Tensor::stack(&[&frame, &frame, &frame, &frame]).unwrap();
        let mut tape = Tape::new();
        let p = head.register(&mut tape);
        let past = tape.constant(history.narrow(0, 3).unwrap());
        let s = tape.tensordot_scores(p.temporal.ws, past).unwrap();
        let s = tape.add_row_bias(s, p.temporal.bs).unwrap();
        let s = tape.tanh(s).unwrap();
        let a = tape.softmax_rows(s).unwrap();
        for &w in tape.value(a).data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let htilde = head.temporal_attention(&history).unwrap();
        for n in 0..2 {
            let context = &htilde.data()[n * 6 + 3..n * 6 + 6];
            for (got, want) in context.iter().zip(&frame.data()[n * 3..n * 3 + 3]) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn means_cases() {
        let mut head = HeadParams::zeros(Dims::new(2, 1));
        head.bo = Tensor::vector(vec![0.25, -3.0]);
        let htilde = Tensor::full(&[2, 2], 9.0);
        assert_eq!(head.component_means(&htilde).unwrap(), head.bo);

        let mut head = HeadParams::zeros(Dims::new(1, 1));
        head.wo = Tensor::new(vec![1, 2], vec![2.0, 0.0]).unwrap();
        head.bo = Tensor::vector(vec![1.0]);
        let htilde = Tensor::new(vec![1, 2], vec![3.0, 5.0]).unwrap();
        assert_eq!(head.component_means(&htilde).unwrap().data(), &[7.0]);
    }

    #[test]
    fn prior_is_uniform_without_weights() {
        let head = HeadParams::zeros(Dims::new(4, 2));
        let mut rng = seeded(3);
        let prior = head.prior_attention(&random(&[4, 4], &mut rng)).unwrap();
        assert!(prior.data().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn prior_for_opposite_scores() {
        // Scores tanh(±s) = ±1 exactly are unreachable; pick Wv so the
        // tanh outputs are (t, −t) and compare with softmax(t, −t).
        let mut head = HeadParams::zeros(Dims::new(2, 1));
        head.wv = Tensor::vector(vec![1.0, 0.0]);
        let htilde = Tensor::new(vec![2, 2], vec![0.5, 0.0, -0.5, 0.0]).unwrap();
        let prior = head.prior_attention(&htilde).unwrap();
        let t = 0.5f64.tanh();
        let want = (t).exp() / (t.exp() + (-t).exp());
        assert!((prior.data()[0] - want).abs() < 1e-15);

        let softmax_pm1 = 1f64.exp() / (1f64.exp() + (-1f64).exp());
        assert!((softmax_pm1 - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn log_gaussian_values() {
        let base = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((log_gaussian(1.5, 1.5, 1.0).unwrap() - base).abs() < 1e-15);
        assert!((log_gaussian(0.0, 1.0, 1.0).unwrap() - (base - 0.5)).abs() < 1e-15);
        assert!((base + 0.918939).abs() < 1e-6);
        assert!(log_gaussian(0.0, 0.0, 0.0).is_err());
        assert!(log_gaussian(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn log_gaussian_integrates_to_one() {
        // Composite Simpson on [mu − 12σ, mu + 12σ].
        for &(mu, sigma2) in &[(0.0, 1.0), (2.5, 0.3), (-1.0, 4.0)] {
            let sd = f64::sqrt(sigma2);
            let (lo, hi, steps) = (mu - 12.0 * sd, mu + 12.0 * sd, 20_000);
            let h = (hi - lo) / steps as f64;
            let f = |y: f64| log_gaussian(y, mu, sigma2).unwrap().exp();
            let mut total = f(lo) + f(hi);
            for i in 1..steps {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                total += w * f(lo + i as f64 * h);
            }
            assert!((total * h / 3.0 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_component_mixture_degenerates() {
        let dims = Dims::new(1, 3);
        let mut rng = seeded(4);
        let head = HeadParams::init(dims, &mut rng);
        let history = random(&[4, 1, 3], &mut rng);
        let out = head.mixture_forward(&history, 0.7).unwrap();
        assert_eq!(out.prior.data(), &[1.0]);
        assert_eq!(out.posterior.data(), &[1.0]);
        assert_eq!(out.loglik, log_gaussian(0.7, out.mu.data()[0], 1.0).unwrap());
        assert_eq!(out.yhat, out.mu.data()[0]);
    }

    #[test]
    fn two_component_scalar_oracle() {
        // prior (0.6, 0.4) via scores whose softmax is (0.6, 0.4); means via bo.
        let mut tape = Tape::new();
        let log_prior = tape.constant(Tensor::vector(vec![0.6f64.ln(), 0.4f64.ln()]));
        let mu = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let target = tape.constant(Tensor::full(&[2], 1.0));
        let r = tape.sub(mu, target).unwrap();
        let sq = tape.square(r).unwrap();
        let ld = tape.affine(sq, -0.5, -0.5 * LN_2PI).unwrap();
        let joint = tape.add(log_prior, ld).unwrap();
        let ll = tape.logsumexp(joint).unwrap();
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let oracle = (0.6 * phi(0.0) + 0.4 * phi(1.0)).ln();
        assert!((tape.value(ll).data()[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn matching_component_dominates_posterior() {
        let mut head = HeadParams::zeros(Dims::new(2, 1));
        head.bo = Tensor::vector(vec![3.0, -7.0]);
        let out = head.mixture_forward(&Tensor::zeros(&[3, 2, 1]), 3.0).unwrap();
        assert_eq!(out.prior.data(), &[0.5, 0.5]);
        let ratio = out.posterior.data()[1] / out.posterior.data()[0];
        assert!((ratio - (-50.0f64).exp()).abs() < 1e-30);
        assert!((out.posterior.data()[1] - 1.9e-22).abs() < 1e-23);
    }

    #[test]
    fn prediction_is_weighted_mean() {
        let mut head = HeadParams::zeros(Dims::new(2, 1));
        head.bo = Tensor::vector(vec![0.0, 4.0]);
        assert_eq!(head.predict(&Tensor::zeros(&[2, 2, 1])).unwrap(), 2.0);
    }

    #[test]
    fn short_history_rejected() {
        let head = HeadParams::zeros(Dims::new(2, 2));
        assert!(head.temporal_attention(&Tensor::zeros(&[1, 2, 2])).is_err());
    }
}
