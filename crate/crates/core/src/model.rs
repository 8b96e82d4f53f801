//! The full forecaster and its ablation variants.
//!
//! * [`VariantKind::MvLstm`]: multi-variable cell + mixture attention head.
//! * [`VariantKind::MvFusion`]: same cell, but the variable attention fuses the
//!   per-variable summaries into one vector read out by a single linear layer.
//! * [`VariantKind::MvIndep`]: one single-variable cell per input, so no
//!   information crosses between variables before the mixture head.
//! * [`VariantKind::Vanilla`]: a plain LSTM with `N·d` units and a linear output.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::cell::{self, CellParams, CellVars, Dims};
use crate::error::{Error, Result};
use crate::head::{self, HeadParams, HeadVars, MixtureOutput, TemporalVars, VariableVars};
use crate::init::{glorot, ModelRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    MvLstm,
    MvFusion,
    MvIndep,
    Vanilla,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [Self::MvLstm, Self::MvFusion, Self::MvIndep, Self::Vanilla];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MvLstm => "mvlstm",
            Self::MvFusion => "mvfusion",
            Self::MvIndep => "mvindep",
            Self::Vanilla => "vanilla",
        }
    }

    /// Whether the variant produces prior/posterior attention.
    pub fn has_mixture(self) -> bool {
        matches!(self, Self::MvLstm | Self::MvIndep)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown variant `{s}` (expected mvlstm, mvfusion, mvindep or vanilla)"
            ))
        })
    }
}

/// Variable attention that fuses summaries instead of mixing components.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub ws: Tensor,
    pub bs: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    /// Read-out of the fused `2d` summary.
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl FusionParams {
    pub fn init(dims: Dims, rng: &mut ModelRng) -> Self {
        let Dims { n, d } = dims;
        Self {
            ws: glorot(&[n, d], rng),
            bs: Tensor::zeros(&[n]),
            wv: glorot(&[2 * d], rng),
            bv: Tensor::zeros(&[1]),
            w_out: glorot(&[2 * d], rng),
            b_out: Tensor::zeros(&[1]),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("ws", &self.ws),
            ("bs", &self.bs),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.ws,
            &mut self.bs,
            &mut self.wv,
            &mut self.bv,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    fn bind(&self, v: &[Var]) -> FusionVars {
        FusionVars {
            temporal: TemporalVars { ws: v[0], bs: v[1] },
            variable: VariableVars { wv: v[2], bv: v[3] },
            w_out: v[4],
            b_out: v[5],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub temporal: TemporalVars,
    pub variable: VariableVars,
    pub w_out: Var,
    pub b_out: Var,
}

/// Standard LSTM with gates ordered input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaParams {
    /// `[4D, N+D]`.
    pub w_gate: Tensor,
    /// `[4D]`.
    pub b_gate: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl VanillaParams {
    pub fn init(inputs: usize, hidden: usize, rng: &mut ModelRng) -> Self {
        let mut b_gate = Tensor::zeros(&[4 * hidden]);
        b_gate.data_mut()[hidden..2 * hidden].fill(1.0);
        Self {
            w_gate: glorot(&[4 * hidden, inputs + hidden], rng),
            b_gate,
            w_out: glorot(&[hidden], rng),
            b_out: Tensor::zeros(&[1]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_out.len()
    }

    pub fn inputs(&self) -> usize {
        self.w_gate.shape()[1] - self.hidden()
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_gate", &self.w_gate),
            ("b_gate", &self.b_gate),
            ("w_out", &self.w_out),
            ("b_out", &self.b_out),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_gate, &mut self.b_gate, &mut self.w_out, &mut self.b_out]
    }

    fn bind(&self, v: &[Var]) -> VanillaVars {
        VanillaVars {
            w_gate: v[0],
            b_gate: v[1],
            w_out: v[2],
            b_out: v[3],
            hidden: self.hidden(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VanillaVars {
    pub w_gate: Var,
    pub b_gate: Var,
    pub w_out: Var,
    pub b_out: Var,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    MvLstm { cell: CellParams, head: HeadParams },
    MvFusion { cell: CellParams, head: FusionParams },
    MvIndep { cells: Vec<CellParams>, head: HeadParams },
    Vanilla(VanillaParams),
}

#[derive(Debug, Clone)]
pub enum ModelVars {
    MvLstm { cell: CellVars, head: HeadVars },
    MvFusion { cell: CellVars, head: FusionVars },
    MvIndep { cells: Vec<CellVars>, head: HeadVars },
    Vanilla(VanillaVars),
}

/// Dropout settings for one training sequence.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ModelRng,
}

/// Tape handles produced by [`Model::sequence_forward`].
#[derive(Debug, Clone, Copy)]
pub struct SequenceVars {
    /// Per-sequence training loss, `[1]`.
    pub loss: Var,
    pub mixture: Option<head::MixtureVars>,
    /// Point forecast, `[1]`, for the variants that produce one on the tape.
    pub yhat: Option<Var>,
}

impl Model {
    pub fn init(kind: VariantKind, dims: Dims, rng: &mut ModelRng) -> Self {
        match kind {
            VariantKind::MvLstm => Self::MvLstm {
                cell: CellParams::init(dims, rng),
                head: HeadParams::init(dims, rng),
            },
            VariantKind::MvFusion => Self::MvFusion {
                cell: CellParams::init(dims, rng),
                head: FusionParams::init(dims, rng),
            },
            VariantKind::MvIndep => Self::MvIndep {
                cells: (0..dims.n)
                    .map(|_| CellParams::init(Dims::new(1, dims.d), rng))
                    .collect(),
                head: HeadParams::init(dims, rng),
            },
            VariantKind::Vanilla => Self::Vanilla(VanillaParams::init(dims.n, dims.width(), rng)),
        }
    }

    pub fn kind(&self) -> VariantKind {
        match self {
            Self::MvLstm { .. } => VariantKind::MvLstm,
            Self::MvFusion { .. } => VariantKind::MvFusion,
            Self::MvIndep { .. } => VariantKind::MvIndep,
            Self::Vanilla(_) => VariantKind::Vanilla,
        }
    }

    /// Number of input variables the model expects.
    pub fn n_inputs(&self) -> usize {
        match self {
            Self::MvLstm { cell, .. } | Self::MvFusion { cell, .. } => cell.dims().n,
            Self::MvIndep { cells, .. } => cells.len(),
            Self::Vanilla(p) => p.inputs(),
        }
    }

    /// Every learnable tensor with a dotted name, in registration order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        fn prefixed<'a>(prefix: &str, items: Vec<(&'static str, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
            items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
        }
        match self {
            Self::MvLstm { cell, head } => {
                let mut v = prefixed("cell", cell.named());
                v.extend(prefixed("head", head.named()));
                v
            }
            Self::MvFusion { cell, head } => {
                let mut v = prefixed("cell", cell.named());
                v.extend(prefixed("fusion", head.named()));
                v
            }
            Self::MvIndep { cells, head } => {
                let mut v = Vec::new();
                for (i, c) in cells.iter().enumerate() {
                    v.extend(prefixed(&format!("cell{i}"), c.named()));
                }
                v.extend(prefixed("head", head.named()));
                v
            }
            Self::Vanilla(p) => prefixed("lstm", p.named()),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Self::MvLstm { cell, head } => {
                let mut v = cell.tensors_mut();
                v.extend(head.tensors_mut());
                v
            }
            Self::MvFusion { cell, head } => {
                let mut v = cell.tensors_mut();
                v.extend(head.tensors_mut());
                v
            }
            Self::MvIndep { cells, head } => {
                let mut v: Vec<&mut Tensor> = cells.iter_mut().flat_map(|c| c.tensors_mut()).collect();
                v.extend(head.tensors_mut());
                v
            }
            Self::Vanilla(p) => p.tensors_mut(),
        }
    }

    /// Rebuild a model from [`Model::named_params`] output.
    pub fn from_named(kind: VariantKind, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut take = |name: String| {
            tensors
                .remove(&name)
                .ok_or_else(|| Error::Mismatch(format!("missing tensor `{name}`")))
        };
        let mut group = |prefix: &str, names: &[&str]| -> Result<Vec<Tensor>> {
            names.iter().map(|n| take(format!("{prefix}.{n}"))).collect()
        };
        let model = match kind {
            VariantKind::MvLstm => Self::MvLstm {
                cell: CellParams::from_tensors(group("cell", &cell::CELL_PARAM_NAMES)?)?,
                head: HeadParams::from_tensors(group("head", &head::HEAD_PARAM_NAMES)?)?,
            },
            VariantKind::MvFusion => {
                let cell = CellParams::from_tensors(group("cell", &cell::CELL_PARAM_NAMES)?)?;
                let [ws, bs, wv, bv, w_out, b_out]: [Tensor; 6] =
                    group("fusion", &["ws", "bs", "wv", "bv", "w_out", "b_out"])?
                        .try_into()
                        .unwrap();
                let head = FusionParams {
                    ws,
                    bs,
                    wv,
                    bv,
                    w_out,
                    b_out,
                };
                let mut expected_rng = crate::init::seeded(0);
                let expected = FusionParams::init(cell.dims(), &mut expected_rng);
                check_shapes("fusion", &head.named(), &expected.named())?;
                Self::MvFusion { cell, head }
            }
            VariantKind::MvIndep => {
                let head = HeadParams::from_tensors(group("head", &head::HEAD_PARAM_NAMES)?)?;
                let dims = head.dims();
                let cells = (0..dims.n)
                    .map(|i| {
                        let c = CellParams::from_tensors(group(&format!("cell{i}"), &cell::CELL_PARAM_NAMES)?)?;
                        if c.dims() != Dims::new(1, dims.d) {
                            return Err(Error::Mismatch(format!("cell{i} has dims {:?}", c.dims())));
                        }
                        Ok(c)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::MvIndep { cells, head }
            }
            VariantKind::Vanilla => {
                let [w_gate, b_gate, w_out, b_out]: [Tensor; 4] =
                    group("lstm", &["w_gate", "b_gate", "w_out", "b_out"])?
                        .try_into()
                        .unwrap();
                let hidden = w_out.len();
                if w_gate.rank() != 2 || w_gate.shape()[0] != 4 * hidden || w_gate.shape()[1] <= hidden {
                    return Err(Error::Mismatch(format!("lstm w_gate has shape {:?}", w_gate.shape())));
                }
                let p = VanillaParams {
                    w_gate,
                    b_gate,
                    w_out,
                    b_out,
                };
                let mut rng = crate::init::seeded(0);
                let expected = VanillaParams::init(p.inputs(), hidden, &mut rng);
                check_shapes("lstm", &p.named(), &expected.named())?;
                Self::Vanilla(p)
            }
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Mismatch(format!("unexpected tensor `{extra}`")));
        }
        Ok(model)
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        let vars: Vec<Var> = self.named_params().into_iter().map(|(_, t)| tape.param(t)).collect();
        self.bind(&vars)
    }

    /// Handles for parameters already on a tape, in [`Model::named_params`]
    /// order.
    pub fn bind(&self, vars: &[Var]) -> ModelVars {
        const CELL: usize = cell::CELL_PARAM_NAMES.len();
        match self {
            Self::MvLstm { cell, head } => ModelVars::MvLstm {
                cell: cell.bind(&vars[..CELL]),
                head: head.bind(&vars[CELL..]),
            },
            Self::MvFusion { cell, head } => ModelVars::MvFusion {
                cell: cell.bind(&vars[..CELL]),
                head: head.bind(&vars[CELL..]),
            },
            Self::MvIndep { cells, head } => ModelVars::MvIndep {
                cells: cells
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.bind(&vars[i * CELL..(i + 1) * CELL]))
                    .collect(),
                head: head.bind(&vars[cells.len() * CELL..]),
            },
            Self::Vanilla(p) => ModelVars::Vanilla(p.bind(vars)),
        }
    }

    /// Record the forward pass and per-sequence loss for inputs `xs[T,N]` and
    /// target `y_next`. Mixture variants use the negative log-likelihood; the
    /// others use squared error.
    pub fn sequence_forward(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        xs: &Tensor,
        y_next: f64,
        dropout: Option<Dropout<'_>>,
    ) -> Result<SequenceVars> {
        if xs.rank() != 2 || xs.shape()[1] != self.n_inputs() {
            return Err(Error::contract(format!(
                "{} model expects inputs [T,{}], got {:?}",
                self.kind(),
                self.n_inputs(),
                xs.shape()
            )));
        }
        match vars {
            ModelVars::MvLstm { cell, head } => {
                let unrolled = cell::unroll(tape, cell, xs)?;
                mixture_loss(tape, head, unrolled.history, y_next, dropout)
            }
            ModelVars::MvIndep { cells, head } => {
                let history = mvindep_history(tape, cells, xs)?;
                mixture_loss(tape, head, history, y_next, dropout)
            }
            ModelVars::MvFusion { cell, head } => {
                let unrolled = cell::unroll(tape, cell, xs)?;
                let (yhat, loss) = mvfusion_forward(tape, head, unrolled.history, y_next, dropout)?;
                Ok(SequenceVars {
                    loss,
                    mixture: None,
                    yhat: Some(yhat),
                })
            }
            ModelVars::Vanilla(p) => {
                let (yhat, loss) = vanilla_forward(tape, p, xs, y_next, dropout)?;
                Ok(SequenceVars {
                    loss,
                    mixture: None,
                    yhat: Some(yhat),
                })
            }
        }
    }

    /// Loss value and parameter gradients (registration order) for one sequence.
    pub fn sequence_gradients(
        &self,
        xs: &Tensor,
        y_next: f64,
        dropout: Option<Dropout<'_>>,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let out = self.sequence_forward(&mut tape, &vars, xs, y_next, dropout)?;
        let loss = tape.value(out.loss).item()?;
        let grads = tape.backward(out.loss)?.into_params();
        Ok((loss, grads))
    }

    /// Mixture quantities for one sequence; `None` for variants without a mixture.
    pub fn mixture_output(&self, xs: &Tensor, y_next: f64) -> Result<Option<MixtureOutput>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let out = self.sequence_forward(&mut tape, &vars, xs, y_next, None)?;
        Ok(out.mixture.map(|m| m.output(&tape)))
    }

    /// One-step-ahead point forecast (dropout off).
    pub fn predict(&self, xs: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let out = self.sequence_forward(&mut tape, &vars, xs, 0.0, None)?;
        match (out.yhat, out.mixture) {
            (Some(y), _) => Ok(tape.value(y).item()?),
            (None, Some(m)) => Ok(m.output(&tape).yhat),
            (None, None) => unreachable!("every variant yields a forecast"),
        }
    }
}

fn check_shapes(group: &str, got: &[(&str, &Tensor)], want: &[(&str, &Tensor)]) -> Result<()> {
    for ((name, g), (_, w)) in got.iter().zip(want) {
        if g.shape() != w.shape() {
            return Err(Error::Mismatch(format!(
                "{group} {name} has shape {:?}, expected {:?}",
                g.shape(),
                w.shape()
            )));
        }
    }
    Ok(())
}

fn mixture_loss(
    tape: &mut Tape,
    head: &HeadVars,
    history: Var,
    y_next: f64,
    dropout: Option<Dropout<'_>>,
) -> Result<SequenceVars> {
    let mut htilde = head::temporal_attention(tape, &head.temporal, history)?;
    if let Some(Dropout { rate, rng }) = dropout {
        htilde = head::dropout(tape, htilde, rate, rng)?;
    }
    let mixture = head::mixture(tape, head, htilde, y_next)?;
    let loss = tape.affine(mixture.loglik, -1.0, 0.0)?;
    Ok(SequenceVars {
        loss,
        mixture: Some(mixture),
        yhat: None,
    })
}

/// Independent single-variable unrolls stacked into a `[T,N,d]` history.
pub fn mvindep_history(tape: &mut Tape, cells: &[CellVars], xs: &Tensor) -> Result<Var> {
    let (steps, n) = (xs.shape()[0], xs.shape()[1]);
    if cells.len() != n {
        return Err(Error::contract(format!("{} cells for {n} variables", cells.len())));
    }
    let mut histories = Vec::with_capacity(n);
    for (v, cell) in cells.iter().enumerate() {
        let column = Tensor::from_fn(&[steps, 1], |t| xs.data()[t * n + v]);
        histories.push(cell::unroll(tape, cell, &column)?.history);
    }
    Ok(tape.concat(&histories, 1)?)
}

/// Fused read-out: `ŷ = w_out·Σₙ priorₙ h̃ⁿ + b_out`, squared-error loss.
/// Returns `(ŷ, loss)`.
pub fn mvfusion_forward(
    tape: &mut Tape,
    head: &FusionVars,
    history: Var,
    y_next: f64,
    dropout: Option<Dropout<'_>>,
) -> Result<(Var, Var)> {
    let mut htilde = head::temporal_attention(tape, &head.temporal, history)?;
    if let Some(Dropout { rate, rng }) = dropout {
        htilde = head::dropout(tape, htilde, rate, rng)?;
    }
    let scores = head::variable_scores(tape, &head.variable, htilde)?;
    let prior = tape.softmax_rows(scores)?;
    let fused = tape.vecmat(prior, htilde)?;
    let yhat = tape.dot(head.w_out, fused)?;
    let yhat = tape.add(yhat, head.b_out)?;
    let loss = squared_error(tape, yhat, y_next)?;
    Ok((yhat, loss))
}

/// Plain LSTM over `xs[T,N]`, linear output on the final hidden state.
/// Returns `(ŷ, loss)`.
pub fn vanilla_forward(
    tape: &mut Tape,
    p: &VanillaVars,
    xs: &Tensor,
    y_next: f64,
    dropout: Option<Dropout<'_>>,
) -> Result<(Var, Var)> {
    let hidden = p.hidden;
    let steps = xs.shape()[0];
    if steps < 2 {
        return Err(Error::contract(format!("need at least 2 time steps, got {steps}")));
    }
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    let mut c = tape.constant(Tensor::zeros(&[hidden]));
    for t in 0..steps {
        let x = tape.constant(xs.index0(t)?);
        let joined = tape.concat(&[x, h], 0)?;
        let pre = tape.matmul(p.w_gate, joined)?;
        let pre = tape.add(pre, p.b_gate)?;
        let gates = tape.narrow(pre, 0, 3 * hidden)?;
        let gates = tape.sigmoid(gates)?;
        let i = tape.narrow(gates, 0, hidden)?;
        let f = tape.narrow(gates, hidden, hidden)?;
        let o = tape.narrow(gates, 2 * hidden, hidden)?;
        let g = tape.narrow(pre, 3 * hidden, hidden)?;
        let g = tape.tanh(g)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        c = tape.add(keep, write)?;
        let squashed = tape.tanh(c)?;
        h = tape.mul(o, squashed)?;
    }
    let mut features = h;
    if let Some(Dropout { rate, rng }) = dropout {
        features = head::dropout(tape, features, rate, rng)?;
    }
    let yhat = tape.dot(p.w_out, features)?;
    let yhat = tape.add(yhat, p.b_out)?;
    let loss = squared_error(tape, yhat, y_next)?;
    Ok((yhat, loss))
}

fn squared_error(tape: &mut Tape, yhat: Var, y: f64) -> Result<Var> {
    let shifted = tape.affine(yhat, 1.0, -y)?;
    Ok(tape.square(shifted)?)
}
