//! The multi-variable LSTM cell.
//!
//! Hidden state is a matrix `H ∈ R^{N×d}` with one `d`-dimensional row per
//! input variable. The candidate cell content `J` is computed row by row from
//! that variable's own hidden row and input only, while the input, forget and
//! output gates see every variable. Flattening uses variable-major order, so
//! the memory-cell slice `[n·d, (n+1)·d)` belongs to variable `n`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init::{glorot, ModelRng};
use crate::tensor::Tensor;

/// Number of variables `N` and hidden units per variable `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub d: usize,
}

impl Dims {
    pub fn new(n: usize, d: usize) -> Self {
        assert!(n > 0 && d > 0, "dimensions must be positive");
        Self { n, d }
    }

    /// Total layer width `D = N·d`.
    pub fn width(&self) -> usize {
        self.n * self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    /// Hidden-to-hidden transitions, `[N,d,d]`.
    pub wh: Tensor,
    /// Input-to-hidden transitions, `[N,d]`.
    pub wx: Tensor,
    /// Cell-update bias, `[N,d]`.
    pub bj: Tensor,
    /// Gate weights acting on `x ⊕ vec(H)`, `[3D, N+D]`, rows ordered input, forget, output.
    pub w_gate: Tensor,
    /// Gate bias, `[3D]`.
    pub b_gate: Tensor,
}

pub const CELL_PARAM_NAMES: [&str; 5] = ["wh", "wx", "bj", "w_gate", "b_gate"];

impl CellParams {
    pub fn init(dims: Dims, rng: &mut ModelRng) -> Self {
        let (n, d, width) = (dims.n, dims.d, dims.width());
        let mut b_gate = Tensor::zeros(&[3 * width]);
        b_gate.data_mut()[width..2 * width].fill(1.0);
        Self {
            wh: glorot(&[n, d, d], rng),
            wx: glorot(&[n, d], rng),
            bj: Tensor::zeros(&[n, d]),
            w_gate: glorot(&[3 * width, n + width], rng),
            b_gate,
        }
    }

    pub fn zeros(dims: Dims) -> Self {
        let (n, d, width) = (dims.n, dims.d, dims.width());
        Self {
            wh: Tensor::zeros(&[n, d, d]),
            wx: Tensor::zeros(&[n, d]),
            bj: Tensor::zeros(&[n, d]),
            w_gate: Tensor::zeros(&[3 * width, n + width]),
            b_gate: Tensor::zeros(&[3 * width]),
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.wx.shape()[0], self.wx.shape()[1])
    }

    /// Build from tensors in [`CELL_PARAM_NAMES`] order, checking every shape.
    pub fn from_tensors(mut tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != CELL_PARAM_NAMES.len() {
            return Err(Error::contract("cell needs exactly five tensors"));
        }
        let b_gate = tensors.pop().unwrap();
        let w_gate = tensors.pop().unwrap();
        let bj = tensors.pop().unwrap();
        let wx = tensors.pop().unwrap();
        let wh = tensors.pop().unwrap();
        if wx.rank() != 2 {
            return Err(Error::Mismatch(format!("cell wx has shape {:?}", wx.shape())));
        }
        let params = Self {
            wh,
            wx,
            bj,
            w_gate,
            b_gate,
        };
        let expected = Self::zeros(params.dims());
        for ((name, got), (_, want)) in params.named().into_iter().zip(expected.named()) {
            if got.shape() != want.shape() {
                return Err(Error::Mismatch(format!(
                    "cell {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(params)
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("wh", &self.wh),
            ("wx", &self.wx),
            ("bj", &self.bj),
            ("w_gate", &self.w_gate),
            ("b_gate", &self.b_gate),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.wh,
            &mut self.wx,
            &mut self.bj,
            &mut self.w_gate,
            &mut self.b_gate,
        ]
    }

    /// Put every tensor on `tape` as a parameter, in [`CellParams::named`] order.
    pub fn register(&self, tape: &mut Tape) -> CellVars {
        let v: Vec<Var> = self.named().into_iter().map(|(_, t)| tape.param(t)).collect();
        self.bind(&v)
    }

    /// Handles for vars already on a tape, in [`CellParams::named`] order.
    pub fn bind(&self, v: &[Var]) -> CellVars {
        CellVars {
            wh: v[0],
            wx: v[1],
            bj: v[2],
            w_gate: v[3],
            b_gate: v[4],
            dims: self.dims(),
        }
    }

    pub fn cell_update_matrix(&self, h_prev: &Tensor, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let (h, x) = (tape.constant(h_prev.clone()), tape.constant(x.clone()));
        let j = cell_update_matrix(&mut tape, &p, h, x)?;
        Ok(tape.value(j).clone())
    }

    pub fn gates(&self, h_prev: &Tensor, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let (h, x) = (tape.constant(h_prev.clone()), tape.constant(x.clone()));
        let (i, f, o) = gates(&mut tape, &p, h, x)?;
        Ok((tape.value(i).clone(), tape.value(f).clone(), tape.value(o).clone()))
    }

    pub fn step(&self, state: &CellState, x: &Tensor) -> Result<CellState> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let h = tape.constant(state.h.clone());
        let c = tape.constant(state.c.clone());
        let x = tape.constant(x.clone());
        let (h, c) = step(&mut tape, &p, h, c, x)?;
        Ok(CellState {
            h: tape.value(h).clone(),
            c: tape.value(c).clone(),
        })
    }

    pub fn unroll(&self, xs: &Tensor) -> Result<UnrollOutput> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let out = unroll(&mut tape, &p, xs)?;
        Ok(UnrollOutput {
            history: tape.value(out.history).clone(),
            final_state: CellState {
                h: tape.value(out.h).clone(),
                c: tape.value(out.c).clone(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    /// Hidden state matrix `[N,d]`.
    pub h: Tensor,
    /// Memory cell `[N·d]`.
    pub c: Tensor,
}

impl CellState {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            h: Tensor::zeros(&[dims.n, dims.d]),
            c: Tensor::zeros(&[dims.width()]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrollOutput {
    /// `[T,N,d]`; entry `t` is the hidden state after consuming input `t`.
    pub history: Tensor,
    pub final_state: CellState,
}

/// Tape handles for a registered [`CellParams`].
#[derive(Debug, Clone, Copy)]
pub struct CellVars {
    pub wh: Var,
    pub wx: Var,
    pub bj: Var,
    pub w_gate: Var,
    pub b_gate: Var,
    pub dims: Dims,
}

/// `J = tanh(W_h ⊛ H_prev + W_x * x + b_j)`; row `n` reads only row `n` of
/// every operand.
pub fn cell_update_matrix(tape: &mut Tape, p: &CellVars, h_prev: Var, x: Var) -> Result<Var> {
    let recurrent = tape.tensordot_axis_n(p.wh, h_prev)?;
    let input = tape.var_product(p.wx, x)?;
    let pre = tape.add(recurrent, input)?;
    let pre = tape.add(pre, p.bj)?;
    Ok(tape.tanh(pre)?)
}

/// Input, forget and output gates from `σ(W [x ⊕ vec(H_prev)] + b)`.
pub fn gates(tape: &mut Tape, p: &CellVars, h_prev: Var, x: Var) -> Result<(Var, Var, Var)> {
    let width = p.dims.width();
    let flat = tape.vec(h_prev)?;
    let joined = tape.concat(&[x, flat], 0)?;
    let pre = tape.matmul(p.w_gate, joined)?;
    let pre = tape.add(pre, p.b_gate)?;
    let act = tape.sigmoid(pre)?;
    let i = tape.narrow(act, 0, width)?;
    let f = tape.narrow(act, width, width)?;
    let o = tape.narrow(act, 2 * width, width)?;
    Ok((i, f, o))
}

/// One recurrent step; returns the new `(H, c)`.
pub fn step(tape: &mut Tape, p: &CellVars, h_prev: Var, c_prev: Var, x: Var) -> Result<(Var, Var)> {
    let j = cell_update_matrix(tape, p, h_prev, x)?;
    let (i, f, o) = gates(tape, p, h_prev, x)?;
    let j_flat = tape.vec(j)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, j_flat)?;
    let c = tape.add(keep, write)?;
    let squashed = tape.tanh(c)?;
    let h_flat = tape.mul(o, squashed)?;
    let h = tape.matricize(h_flat, p.dims.n, p.dims.d)?;
    Ok((h, c))
}

#[derive(Debug, Clone)]
pub struct UnrollVars {
    /// Stacked hidden states `[T,N,d]`.
    pub history: Var,
    pub h: Var,
    pub c: Var,
}

/// Run the cell over `xs[T,N]` from a zero state.
pub fn unroll(tape: &mut Tape, p: &CellVars, xs: &Tensor) -> Result<UnrollVars> {
    let Dims { n, d } = p.dims;
    if xs.rank() != 2 || xs.shape()[1] != n {
        return Err(Error::contract(format!(
            "unroll expects inputs of shape [T,{n}], got {:?}",
            xs.shape()
        )));
    }
    let steps = xs.shape()[0];
    if steps < 2 {
        return Err(Error::contract(format!(
            "unroll needs at least 2 time steps, got {steps}"
        )));
    }
    let mut h = tape.constant(Tensor::zeros(&[n, d]));
    let mut c = tape.constant(Tensor::zeros(&[n * d]));
    let mut states = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = tape.constant(xs.index0(t)?);
        (h, c) = step(tape, p, h, c, x)?;
        states.push(h);
    }
    let history = tape.stack(&states)?;
    Ok(UnrollVars { history, h, c })
}
