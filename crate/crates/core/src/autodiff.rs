//! Reverse-mode differentiation over [`Tensor`] operations.
//!
//! A [`Tape`] records every operation as a node whose inputs have strictly
//! smaller ids, so the node list is already in topological order. The
//! backward pass walks it once in decreasing id order, which also fixes the
//! order in which fan-out contributions are accumulated: identical tapes give
//! bit-identical gradients.

use std::collections::BTreeMap;

use crate::tensor::{self, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Constant input; receives a gradient but is not reported as a parameter.
    Leaf,
    /// Trainable input, numbered in registration order.
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale·x + shift`.
    Affine {
        input: Var,
        scale: f64,
        shift: f64,
    },
    /// Adds a `[1]` tensor to every element.
    AddScalar(Var, Var),
    AddRowBias(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    MatMul(Var, Var),
    TensordotAxisN(Var, Var),
    TensordotSeq(Var, Var),
    TensordotScores(Var, Var),
    VarProduct(Var, Var),
    RowDot(Var, Var),
    VecMat(Var, Var),
    Dot(Var, Var),
    SoftmaxRows(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Sum(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Stack(Vec<Var>),
    Reshape {
        input: Var,
        shape: Vec<usize>,
    },
    Narrow {
        input: Var,
        start: usize,
        len: usize,
    },
}

impl Op {
    pub fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Param(_) => vec![],
            Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | AddScalar(a, b)
            | AddRowBias(a, b)
            | MatMul(a, b)
            | TensordotAxisN(a, b)
            | TensordotSeq(a, b)
            | TensordotScores(a, b)
            | VarProduct(a, b)
            | RowDot(a, b)
            | VecMat(a, b)
            | Dot(a, b) => vec![*a, *b],
            Affine { input, .. } | Reshape { input, .. } | Narrow { input, .. } => vec![*input],
            Tanh(a) | Sigmoid(a) | Exp(a) | Ln(a) | Square(a) | SoftmaxRows(a) | LogSoftmax(a) | LogSumExp(a)
            | Sum(a) => vec![*a],
            Concat { inputs, .. } | Stack(inputs) => inputs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub value: Tensor,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn param(&mut self, value: &Tensor) -> Var {
        let var = self.push(Op::Param(self.params.len()), value.clone());
        self.params.push(var);
        var
    }

    /// Evaluate `op` on values already on the tape and append the result.
    pub fn record(&mut self, op: Op) -> Result<Var> {
        if matches!(op, Op::Leaf | Op::Param(_)) {
            return Err(TensorError::Contract {
                op: "record",
                reason: "leaves are created with constant() or param()".into(),
            });
        }
        if let Some(bad) = op.inputs().into_iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(TensorError::Contract {
                op: "record",
                reason: format!("input node {} is not on the tape", bad.0),
            });
        }
        let value = self.evaluate(&op)?;
        Ok(self.push(op, value))
    }

    fn evaluate(&self, op: &Op) -> Result<Tensor> {
        let v = |x: &Var| &self.nodes[x.0].value;
        Ok(match op {
            Op::Leaf | Op::Param(_) => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => v(a).add(v(b))?,
            Op::Sub(a, b) => v(a).sub(v(b))?,
            Op::Mul(a, b) => v(a).mul(v(b))?,
            Op::Affine { input, scale, shift } => v(input).map(|x| scale * x + shift),
            Op::AddScalar(a, s) => {
                let s = v(s).item()?;
                v(a).map(|x| x + s)
            }
            Op::AddRowBias(e, b) => v(e).add_row_bias(v(b))?,
            Op::Tanh(a) => v(a).tanh(),
            Op::Sigmoid(a) => v(a).sigmoid(),
            Op::Exp(a) => v(a).exp(),
            Op::Ln(a) => v(a).ln(),
            Op::Square(a) => v(a).square(),
            Op::MatMul(a, b) => v(a).matmul(v(b))?,
            Op::TensordotAxisN(a, b) => v(a).tensordot_axis_n(v(b))?,
            Op::TensordotSeq(a, b) => v(a).tensordot_seq(v(b))?,
            Op::TensordotScores(a, b) => v(a).tensordot_scores(v(b))?,
            Op::VarProduct(a, b) => v(a).var_product(v(b))?,
            Op::RowDot(a, b) => v(a).row_dot(v(b))?,
            Op::VecMat(a, b) => v(a).vecmat(v(b))?,
            Op::Dot(a, b) => Tensor::scalar(v(a).dot(v(b))?),
            Op::SoftmaxRows(a) => v(a).softmax_rows()?,
            Op::LogSoftmax(a) => v(a).log_softmax()?,
            Op::LogSumExp(a) => Tensor::scalar(v(a).logsumexp()),
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
            Op::Concat { inputs, axis } => {
                let parts: Vec<&Tensor> = inputs.iter().map(v).collect();
                Tensor::concat(&parts, *axis)?
            }
            Op::Stack(inputs) => {
                let parts: Vec<&Tensor> = inputs.iter().map(v).collect();
                Tensor::stack(&parts)?
            }
            Op::Reshape { input, shape } => v(input).reshape(shape)?,
            Op::Narrow { input, start, len } => v(input).narrow(*start, *len)?,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Result<Var> {
        self.record(Op::Affine { input, scale, shift })
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.record(Op::AddScalar(a, s))
    }

    pub fn add_row_bias(&mut self, e: Var, b: Var) -> Result<Var> {
        self.record(Op::AddRowBias(e, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Square(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    pub fn tensordot_axis_n(&mut self, w: Var, h: Var) -> Result<Var> {
        self.record(Op::TensordotAxisN(w, h))
    }

    pub fn tensordot_seq(&mut self, a: Var, hs: Var) -> Result<Var> {
        self.record(Op::TensordotSeq(a, hs))
    }

    pub fn tensordot_scores(&mut self, w: Var, hs: Var) -> Result<Var> {
        self.record(Op::TensordotScores(w, hs))
    }

    pub fn var_product(&mut self, wx: Var, x: Var) -> Result<Var> {
        self.record(Op::VarProduct(wx, x))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::RowDot(a, b))
    }

    pub fn vecmat(&mut self, p: Var, h: Var) -> Result<Var> {
        self.record(Op::VecMat(p, h))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Dot(a, b))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.record(Op::SoftmaxRows(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.record(Op::LogSoftmax(a))
    }

    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::LogSumExp(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        self.record(Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        })
    }

    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        self.record(Op::Stack(inputs.to_vec()))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape {
            input,
            shape: shape.to_vec(),
        })
    }

    pub fn narrow(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        self.record(Op::Narrow { input, start, len })
    }

    /// Slice `i` of the leading axis with that axis removed.
    pub fn index0(&mut self, input: Var, i: usize) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        let slice = self.narrow(input, i, 1)?;
        if shape.len() == 1 {
            Ok(slice)
        } else {
            self.reshape(slice, &shape[1..])
        }
    }

    /// Variable-major flattening of an `[N,d]` matrix.
    pub fn vec(&mut self, h: Var) -> Result<Var> {
        let t = self.value(h);
        if t.rank() != 2 {
            return Err(TensorError::Rank {
                op: "vec",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let len = t.len();
        self.reshape(h, &[len])
    }

    pub fn matricize(&mut self, v: Var, n: usize, d: usize) -> Result<Var> {
        let t = self.value(v);
        if t.rank() != 1 || t.len() != n * d {
            return Err(TensorError::ShapeMismatch {
                op: "matricize",
                lhs: t.shape().to_vec(),
                rhs: vec![n, d],
            });
        }
        self.reshape(v, &[n, d])
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// influences it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.shape() != [1] {
            return Err(TensorError::Contract {
                op: "backward",
                reason: format!("loss must have shape [1], got {:?}", loss_value.shape()),
            });
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        // Weight gradients of matrix-vector products with a leaf matrix are
        // sums of outer products; they are collected here and applied in one
        // pass over each matrix at the end.
        let mut outer: BTreeMap<usize, Vec<(Tensor, Var)>> = BTreeMap::new();
        for id in (0..=loss.0).rev() {
            if matches!(nodes[id].op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &nodes[id].op {
                Op::MatMul(w, x) if matches!(nodes[w.0].op, Op::Leaf | Op::Param(_)) => {
                    let k = nodes[w.0].value.shape()[1];
                    let gx = slot(nodes, &mut grads, *x);
                    debug_assert_eq!(gx.len(), k);
                    tensor::gemv_t(gx, nodes[w.0].value.data(), g.data());
                    outer.entry(w.0).or_default().push((g, *x));
                }
                _ => propagate(nodes, &mut grads, id, g.data()),
            }
        }
        for (w, terms) in outer {
            let k = nodes[w].value.shape()[1];
            let xs: Vec<&[f64]> = terms.iter().map(|(_, x)| nodes[x.0].value.data()).collect();
            let mut coefs = vec![0.0; terms.len()];
            let gw = slot(nodes, &mut grads, Var(w));
            for (i, row) in gw.chunks_exact_mut(k).enumerate() {
                for (c, (g, _)) in coefs.iter_mut().zip(&terms) {
                    *c = g.data()[i];
                }
                tensor::outer_acc(row, &coefs, &xs);
            }
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params: self.params.clone(),
        })
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Var>,
}

impl Gradients {
    /// Gradient with respect to any leaf; zeros if it does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Parameter gradients in registration order.
    pub fn into_params(mut self) -> Vec<Tensor> {
        let params = std::mem::take(&mut self.params);
        params
            .into_iter()
            .map(|v| {
                self.grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
            })
            .collect()
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()))
        .data_mut()
}

use tensor::axpy;

fn propagate(nodes: &[Node], grads: &mut [Option<Tensor>], id: usize, g: &[f64]) {
    let val = |v: &Var| nodes[v.0].value.data();
    let shape = |v: &Var| nodes[v.0].value.shape();
    let out = nodes[id].value.data();

    match &nodes[id].op {
        Op::Leaf | Op::Param(_) => {}
        Op::Add(a, b) => {
            axpy(slot(nodes, grads, *a), g, 1.0);
            axpy(slot(nodes, grads, *b), g, 1.0);
        }
        Op::Sub(a, b) => {
            axpy(slot(nodes, grads, *a), g, 1.0);
            axpy(slot(nodes, grads, *b), g, -1.0);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(a), val(b));
            for ((d, gi), bi) in slot(nodes, grads, *a).iter_mut().zip(g).zip(bv) {
                *d += gi * bi;
            }
            for ((d, gi), ai) in slot(nodes, grads, *b).iter_mut().zip(g).zip(av) {
                *d += gi * ai;
            }
        }
        Op::Affine { input, scale, .. } => axpy(slot(nodes, grads, *input), g, *scale),
        Op::AddScalar(a, s) => {
            axpy(slot(nodes, grads, *a), g, 1.0);
            slot(nodes, grads, *s)[0] += g.iter().sum::<f64>();
        }
        Op::AddRowBias(e, b) => {
            axpy(slot(nodes, grads, *e), g, 1.0);
            let cols = shape(e)[1];
            for (d, row) in slot(nodes, grads, *b).iter_mut().zip(g.chunks_exact(cols)) {
                *d += row.iter().sum::<f64>();
            }
        }
        Op::Tanh(a) => {
            for ((d, gi), y) in slot(nodes, grads, *a).iter_mut().zip(g).zip(out) {
                *d += gi * (1.0 - y * y);
            }
        }
        Op::Sigmoid(a) => {
            for ((d, gi), y) in slot(nodes, grads, *a).iter_mut().zip(g).zip(out) {
                *d += gi * y * (1.0 - y);
            }
        }
        Op::Exp(a) => {
            for ((d, gi), y) in slot(nodes, grads, *a).iter_mut().zip(g).zip(out) {
                *d += gi * y;
            }
        }
        Op::Ln(a) => {
            let av = val(a);
            for ((d, gi), x) in slot(nodes, grads, *a).iter_mut().zip(g).zip(av) {
                *d += gi / x;
            }
        }
        Op::Square(a) => {
            let av = val(a);
            for ((d, gi), x) in slot(nodes, grads, *a).iter_mut().zip(g).zip(av) {
                *d += 2.0 * gi * x;
            }
        }
        Op::MatMul(w, x) => {
            let k = shape(w)[1];
            let (wv, xv) = (val(w), val(x));
            for (row, gi) in slot(nodes, grads, *w).chunks_exact_mut(k).zip(g) {
                axpy(row, xv, *gi);
            }
            let gx = slot(nodes, grads, *x);
            for (row, gi) in wv.chunks_exact(k).zip(g) {
                axpy(gx, row, *gi);
            }
        }
        Op::TensordotAxisN(w, h) => {
            let (n, rows, cols) = (shape(w)[0], shape(w)[1], shape(w)[2]);
            let (wv, hv) = (val(w), val(h));
            let gw = slot(nodes, grads, *w);
            for v in 0..n {
                let hrow = &hv[v * cols..(v + 1) * cols];
                for i in 0..rows {
                    let base = (v * rows + i) * cols;
                    axpy(&mut gw[base..base + cols], hrow, g[v * rows + i]);
                }
            }
            let gh = slot(nodes, grads, *h);
            for v in 0..n {
                for i in 0..rows {
                    let base = (v * rows + i) * cols;
                    axpy(
                        &mut gh[v * cols..(v + 1) * cols],
                        &wv[base..base + cols],
                        g[v * rows + i],
                    );
                }
            }
        }
        Op::TensordotSeq(a, hs) => {
            let (n, steps) = (shape(a)[0], shape(a)[1]);
            let d = shape(hs)[2];
            let (av, hv) = (val(a), val(hs));
            let ga = slot(nodes, grads, *a);
            for v in 0..n {
                let gv = &g[v * d..(v + 1) * d];
                for t in 0..steps {
                    let row = &hv[(t * n + v) * d..(t * n + v + 1) * d];
                    ga[v * steps + t] += tensor::dot(gv, row);
                }
            }
            let gh = slot(nodes, grads, *hs);
            for v in 0..n {
                let gv = &g[v * d..(v + 1) * d];
                for t in 0..steps {
                    let base = (t * n + v) * d;
                    axpy(&mut gh[base..base + d], gv, av[v * steps + t]);
                }
            }
        }
        Op::TensordotScores(w, hs) => {
            let (n, d) = (shape(w)[0], shape(w)[1]);
            let steps = shape(hs)[0];
            let (wv, hv) = (val(w), val(hs));
            let gw = slot(nodes, grads, *w);
            for v in 0..n {
                for t in 0..steps {
                    let base = (t * n + v) * d;
                    axpy(&mut gw[v * d..(v + 1) * d], &hv[base..base + d], g[v * steps + t]);
                }
            }
            let gh = slot(nodes, grads, *hs);
            for v in 0..n {
                for t in 0..steps {
                    let base = (t * n + v) * d;
                    axpy(&mut gh[base..base + d], &wv[v * d..(v + 1) * d], g[v * steps + t]);
                }
            }
        }
        Op::VarProduct(wx, x) => {
            let d = shape(wx)[1];
            let (wv, xv) = (val(wx), val(x));
            for ((row, grow), xi) in slot(nodes, grads, *wx)
                .chunks_exact_mut(d)
                .zip(g.chunks_exact(d))
                .zip(xv)
            {
                axpy(row, grow, *xi);
            }
            for ((gx, grow), wrow) in slot(nodes, grads, *x)
                .iter_mut()
                .zip(g.chunks_exact(d))
                .zip(wv.chunks_exact(d))
            {
                *gx += tensor::dot(grow, wrow);
            }
        }
        Op::RowDot(a, b) => {
            let k = shape(a)[1];
            let (av, bv) = (val(a), val(b));
            for ((row, brow), gi) in slot(nodes, grads, *a)
                .chunks_exact_mut(k)
                .zip(bv.chunks_exact(k))
                .zip(g)
            {
                axpy(row, brow, *gi);
            }
            for ((row, arow), gi) in slot(nodes, grads, *b)
                .chunks_exact_mut(k)
                .zip(av.chunks_exact(k))
                .zip(g)
            {
                axpy(row, arow, *gi);
            }
        }
        Op::VecMat(p, h) => {
            let k = shape(h)[1];
            let (pv, hv) = (val(p), val(h));
            for (gp, hrow) in slot(nodes, grads, *p).iter_mut().zip(hv.chunks_exact(k)) {
                *gp += tensor::dot(g, hrow);
            }
            for (row, pi) in slot(nodes, grads, *h).chunks_exact_mut(k).zip(pv) {
                axpy(row, g, *pi);
            }
        }
        Op::Dot(a, b) => {
            let (av, bv) = (val(a), val(b));
            axpy(slot(nodes, grads, *a), bv, g[0]);
            axpy(slot(nodes, grads, *b), av, g[0]);
        }
        Op::SoftmaxRows(a) => {
            let cols = *shape(a).last().unwrap();
            for ((d, grow), yrow) in slot(nodes, grads, *a)
                .chunks_exact_mut(cols)
                .zip(g.chunks_exact(cols))
                .zip(out.chunks_exact(cols))
            {
                let s = tensor::dot(grow, yrow);
                for ((di, gi), yi) in d.iter_mut().zip(grow).zip(yrow) {
                    *di += yi * (gi - s);
                }
            }
        }
        Op::LogSoftmax(a) => {
            let total: f64 = g.iter().sum();
            for ((d, gi), y) in slot(nodes, grads, *a).iter_mut().zip(g).zip(out) {
                *d += gi - y.exp() * total;
            }
        }
        Op::LogSumExp(a) => {
            let lse = out[0];
            let av = val(a);
            for (d, x) in slot(nodes, grads, *a).iter_mut().zip(av) {
                *d += g[0] * (x - lse).exp();
            }
        }
        Op::Sum(a) => {
            for d in slot(nodes, grads, *a).iter_mut() {
                *d += g[0];
            }
        }
        Op::Concat { inputs, axis } => {
            let first = shape(&inputs[0]);
            let outer: usize = first[..*axis].iter().product();
            let inner: usize = first[axis + 1..].iter().product();
            let total: usize = inputs.iter().map(|v| shape(v)[*axis]).sum::<usize>() * inner;
            let mut offset = 0;
            for v in inputs {
                let block = shape(v)[*axis] * inner;
                let dst = slot(nodes, grads, *v);
                for o in 0..outer {
                    let src = &g[o * total + offset..o * total + offset + block];
                    axpy(&mut dst[o * block..(o + 1) * block], src, 1.0);
                }
                offset += block;
            }
        }
        Op::Stack(inputs) => {
            let len = nodes[inputs[0].0].value.len();
            for (i, v) in inputs.iter().enumerate() {
                axpy(slot(nodes, grads, *v), &g[i * len..(i + 1) * len], 1.0);
            }
        }
        Op::Reshape { input, .. } => axpy(slot(nodes, grads, *input), g, 1.0),
        Op::Narrow { input, start, len } => {
            let inner: usize = shape(input)[1..].iter().product();
            let dst = slot(nodes, grads, *input);
            axpy(&mut dst[start * inner..(start + len) * inner], g, 1.0);
        }
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, flat element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub step: f64,
    /// Added to every analytic gradient element before comparison. Only used
    /// to demonstrate that a wrong gradient is caught.
    pub analytic_offset: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            analytic_offset: 0.0,
        }
    }
}

pub fn gradcheck<F, E>(params: &[Tensor], f: F) -> std::result::Result<GradcheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    gradcheck_with(params, f, GradcheckOptions::default())
}

/// Compare tape gradients of `f` against central differences, element by
/// element. Relative error is `|g_a − g_fd| / max(1e-8, |g_a| + |g_fd|)`.
pub fn gradcheck_with<F, E>(
    params: &[Tensor],
    f: F,
    options: GradcheckOptions,
) -> std::result::Result<GradcheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |ps: &[Tensor]| -> std::result::Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item()?)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    let analytic = tape.backward(loss)?.into_params();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for ei in 0..grad.len() {
            let original = work[pi].data()[ei];
            work[pi].data_mut()[ei] = original + options.step;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = original - options.step;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = original;

            let numeric = (plus - minus) / (2.0 * options.step);
            let a = grad.data()[ei] + options.analytic_offset;
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > report.max_rel_error || rel.is_nan() {
                report = GradcheckReport {
                    max_rel_error: rel,
                    worst: (pi, ei),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
