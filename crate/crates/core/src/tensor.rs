//! Dense row-major `f64` tensors of rank 1 to 3.
//!
//! Only the operations the recurrent model and its attention head need are
//! provided. There is no broadcasting: every operation states the shapes it
//! accepts and rejects anything else with a [`TensorError`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not describe {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    Contract { op: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    let valid =
        !shape.is_empty() && shape.len() <= 3 && shape.iter().all(|&e| e > 0) && shape.iter().product::<usize>() == len;
    if valid {
        Ok(())
    } else {
        Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            len,
        })
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        check_shape(shape, len).expect("zero-sized or rank > 3 shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Rank-1 tensor holding `data`.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector tensor");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Scalars are rank-1 tensors of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Build a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let len = shape.iter().product();
        check_shape(shape, len).expect("zero-sized or rank > 3 shape");
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a `[1]` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape == [1] {
            Ok(self.data[0])
        } else {
            Err(TensorError::ShapeMismatch {
                op: "item",
                lhs: self.shape.clone(),
                rhs: vec![1],
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn expect_rank(&self, op: &'static str, expected: usize) -> Result<()> {
        if self.rank() == expected {
            Ok(())
        } else {
            Err(TensorError::Rank {
                op,
                expected,
                shape: self.shape.clone(),
            })
        }
    }

    fn mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: lhs.shape.clone(),
            rhs: rhs.shape.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Like [`Tensor::map`], also passing the flat index.
    pub fn map_indexed(&self, f: impl Fn(usize, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().enumerate().map(|(i, &v)| f(i, v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Self::mismatch(op, self, other));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        self.map(f64::ln)
    }

    pub fn square(&self) -> Tensor {
        self.map(|v| v * v)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Self::mismatch("dot", self, other));
        }
        Ok(dot(&self.data, &other.data))
    }

    /// Matrix-vector product `a[m,k] · b[k] -> [m]`.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        self.expect_rank("matmul", 2)?;
        b.expect_rank("matmul", 1)?;
        let (m, k) = (self.shape[0], self.shape[1]);
        if b.shape[0] != k {
            return Err(Self::mismatch("matmul", self, b));
        }
        let data = self.data.chunks_exact(k).map(|row| dot(row, &b.data)).collect();
        Ok(Tensor { shape: vec![m], data })
    }

    /// Per-variable matrix-vector products: `out[n] = w[n] · h[n]` for
    /// `w[N,d,d]` and `h[N,d]`.
    pub fn tensordot_axis_n(&self, h: &Tensor) -> Result<Tensor> {
        let w = self;
        w.expect_rank("tensordot_axis_n", 3)?;
        h.expect_rank("tensordot_axis_n", 2)?;
        let (n, rows, cols) = (w.shape[0], w.shape[1], w.shape[2]);
        if h.shape[0] != n || h.shape[1] != cols {
            return Err(Self::mismatch("tensordot_axis_n", w, h));
        }
        let mut out = Vec::with_capacity(n * rows);
        for v in 0..n {
            let hv = &h.data[v * cols..(v + 1) * cols];
            let wv = &w.data[v * rows * cols..(v + 1) * rows * cols];
            out.extend(wv.chunks_exact(cols).map(|row| dot(row, hv)));
        }
        Ok(Tensor {
            shape: vec![n, rows],
            data: out,
        })
    }

    /// Attention-weighted sum over time: `out[n,k] = Σ_t a[n,t]·hs[t,n,k]`
    /// for `a[N,T1]` and `hs[T1,N,d]`.
    pub fn tensordot_seq(&self, hs: &Tensor) -> Result<Tensor> {
        let a = self;
        a.expect_rank("tensordot_seq", 2)?;
        hs.expect_rank("tensordot_seq", 3)?;
        let (n, steps) = (a.shape[0], a.shape[1]);
        if hs.shape[0] != steps || hs.shape[1] != n {
            return Err(Self::mismatch("tensordot_seq", a, hs));
        }
        let d = hs.shape[2];
        let mut out = vec![0.0; n * d];
        for v in 0..n {
            let acc = &mut out[v * d..(v + 1) * d];
            for t in 0..steps {
                let weight = a.data[v * steps + t];
                let row = &hs.data[(t * n + v) * d..(t * n + v + 1) * d];
                for (o, &x) in acc.iter_mut().zip(row) {
                    *o += weight * x;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, d],
            data: out,
        })
    }

    /// Per-variable attention scores over time: `out[n,t] = Σ_k w[n,k]·hs[t,n,k]`
    /// for `w[N,d]` and `hs[T1,N,d]`.
    pub fn tensordot_scores(&self, hs: &Tensor) -> Result<Tensor> {
        let w = self;
        w.expect_rank("tensordot_scores", 2)?;
        hs.expect_rank("tensordot_scores", 3)?;
        let (n, d) = (w.shape[0], w.shape[1]);
        if hs.shape[1] != n || hs.shape[2] != d {
            return Err(Self::mismatch("tensordot_scores", w, hs));
        }
        let steps = hs.shape[0];
        let mut out = vec![0.0; n * steps];
        for v in 0..n {
            let wv = &w.data[v * d..(v + 1) * d];
            for t in 0..steps {
                out[v * steps + t] = dot(wv, &hs.data[(t * n + v) * d..(t * n + v + 1) * d]);
            }
        }
        Ok(Tensor {
            shape: vec![n, steps],
            data: out,
        })
    }

    /// Input-to-hidden product: `out[n,k] = wx[n,k]·x[n]`.
    pub fn var_product(&self, x: &Tensor) -> Result<Tensor> {
        let wx = self;
        wx.expect_rank("var_product", 2)?;
        x.expect_rank("var_product", 1)?;
        if wx.shape[0] != x.shape[0] {
            return Err(Self::mismatch("var_product", wx, x));
        }
        let d = wx.shape[1];
        let data = wx
            .data
            .chunks_exact(d)
            .zip(&x.data)
            .flat_map(|(row, &xv)| row.iter().map(move |&w| w * xv))
            .collect();
        Ok(Tensor {
            shape: wx.shape.clone(),
            data,
        })
    }

    /// Row-wise dot products of two `[N,k]` matrices.
    pub fn row_dot(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_rank("row_dot", 2)?;
        if self.shape != other.shape {
            return Err(Self::mismatch("row_dot", self, other));
        }
        let k = self.shape[1];
        let data = self
            .data
            .chunks_exact(k)
            .zip(other.data.chunks_exact(k))
            .map(|(a, b)| dot(a, b))
            .collect();
        Ok(Tensor {
            shape: vec![self.shape[0]],
            data,
        })
    }

    /// Convex-combination style product `out[k] = Σ_n p[n]·h[n,k]`.
    pub fn vecmat(&self, h: &Tensor) -> Result<Tensor> {
        let p = self;
        p.expect_rank("vecmat", 1)?;
        h.expect_rank("vecmat", 2)?;
        if h.shape[0] != p.shape[0] {
            return Err(Self::mismatch("vecmat", p, h));
        }
        let k = h.shape[1];
        let mut out = vec![0.0; k];
        for (row, &w) in h.data.chunks_exact(k).zip(&p.data) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        Ok(Tensor {
            shape: vec![k],
            data: out,
        })
    }

    /// `out[n,t] = e[n,t] + b[n]`.
    pub fn add_row_bias(&self, b: &Tensor) -> Result<Tensor> {
        self.expect_rank("add_row_bias", 2)?;
        b.expect_rank("add_row_bias", 1)?;
        if b.shape[0] != self.shape[0] {
            return Err(Self::mismatch("add_row_bias", self, b));
        }
        let cols = self.shape[1];
        let data = self
            .data
            .chunks_exact(cols)
            .zip(&b.data)
            .flat_map(|(row, &bias)| row.iter().map(move |&v| v + bias))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Softmax over the last axis. A rank-1 tensor is treated as one row.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.rank() > 2 {
            return Err(TensorError::Rank {
                op: "softmax_rows",
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        let cols = *self.shape.last().unwrap();
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(cols) {
            softmax_in_place(row);
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// `a − logsumexp(a)` for a rank-1 tensor.
    pub fn log_softmax(&self) -> Result<Tensor> {
        self.expect_rank("log_softmax", 1)?;
        let lse = logsumexp(&self.data);
        Ok(self.map(|v| v - lse))
    }

    pub fn logsumexp(&self) -> f64 {
        logsumexp(&self.data)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape, self.len())?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Flatten an `[N,d]` hidden-state matrix variable-major: all `d`
    /// entries of variable 0, then variable 1, and so on.
    pub fn vec(&self) -> Result<Tensor> {
        self.expect_rank("vec", 2)?;
        self.reshape(&[self.len()])
    }

    /// Inverse of [`Tensor::vec`].
    pub fn matricize(&self, n: usize, d: usize) -> Result<Tensor> {
        self.expect_rank("matricize", 1)?;
        if n * d != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "matricize",
                lhs: self.shape.clone(),
                rhs: vec![n, d],
            });
        }
        self.reshape(&[n, d])
    }

    /// Concatenate along `axis`. All other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::Contract {
            op: "concat",
            reason: "no inputs".into(),
        })?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::Rank {
                op: "concat",
                expected: axis + 1,
                shape: first.shape.clone(),
            });
        }
        for p in parts {
            let same_rank = p.rank() == rank;
            let same_other = same_rank && (0..rank).all(|i| i == axis || p.shape[i] == first.shape[i]);
            if !same_other {
                return Err(Self::mismatch("concat", first, p));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Ok(Tensor { shape, data })
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::Contract {
            op: "stack",
            reason: "no inputs".into(),
        })?;
        if first.rank() >= 3 {
            return Err(TensorError::Rank {
                op: "stack",
                expected: 2,
                shape: first.shape.clone(),
            });
        }
        let mut data = Vec::with_capacity(parts.len() * first.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Self::mismatch("stack", first, p));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Contiguous range `[start, start+len)` along the leading axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Tensor> {
        if len == 0 || start + len > self.shape[0] {
            return Err(TensorError::Contract {
                op: "narrow",
                reason: format!(
                    "range {start}..{} outside leading extent of {:?}",
                    start + len,
                    self.shape
                ),
            });
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Tensor {
            shape,
            data: self.data[start * inner..(start + len) * inner].to_vec(),
        })
    }

    /// Slice `i` along the leading axis, dropping that axis. On a rank-1
    /// tensor this yields a `[1]` scalar.
    pub fn index0(&self, i: usize) -> Result<Tensor> {
        let slice = self.narrow(i, 1)?;
        if self.rank() == 1 {
            Ok(slice)
        } else {
            slice.reshape(&self.shape[1..])
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline(always)]
fn dot_body(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let (ca, ta) = a.as_chunks::<8>();
    let (cb, tb) = b.as_chunks::<8>();
    let mut acc = [0.0; 8];
    for (x, y) in ca.iter().zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ta.iter().zip(tb).map(|(x, y)| x * y).sum();
    let quad = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    (quad[0] + quad[1]) + (quad[2] + quad[3]) + tail
}

#[inline(always)]
fn axpy_body(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[inline(always)]
fn outer_acc_body(row: &mut [f64], coefs: &[f64], xs: &[&[f64]]) {
    for (j, r) in row.iter_mut().enumerate() {
        let mut acc = *r;
        for (c, x) in coefs.iter().zip(xs) {
            acc += c * x[j];
        }
        *r = acc;
    }
}

#[inline(always)]
fn gemv_t_body(out: &mut [f64], w: &[f64], g: &[f64]) {
    let k = out.len();
    let mut rows = w.chunks_exact(k).zip(g);
    loop {
        match (rows.next(), rows.next(), rows.next(), rows.next()) {
            (Some((w0, g0)), Some((w1, g1)), Some((w2, g2)), Some((w3, g3))) => {
                for j in 0..k {
                    out[j] += (g0 * w0[j] + g1 * w1[j]) + (g2 * w2[j] + g3 * w3[j]);
                }
            }
            (a, b, c, _) => {
                for (wr, gi) in [a, b, c].into_iter().flatten() {
                    axpy_body(out, wr, *gi);
                }
                break;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    /// Same lane layout as `dot_body`: register `lo` holds accumulators 0..4,
    /// `hi` holds 4..8.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn dot(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let (ca, ta) = a.as_chunks::<8>();
        let (cb, tb) = b.as_chunks::<8>();
        let mut lo = _mm256_setzero_pd();
        let mut hi = _mm256_setzero_pd();
        for (x, y) in ca.iter().zip(cb) {
            // SAFETY: each chunk holds eight contiguous f64 values.
            let (x0, x1, y0, y1) = unsafe {
                (
                    _mm256_loadu_pd(x.as_ptr()),
                    _mm256_loadu_pd(x.as_ptr().add(4)),
                    _mm256_loadu_pd(y.as_ptr()),
                    _mm256_loadu_pd(y.as_ptr().add(4)),
                )
            };
            lo = _mm256_add_pd(lo, _mm256_mul_pd(x0, y0));
            hi = _mm256_add_pd(hi, _mm256_mul_pd(x1, y1));
        }
        let mut quad = [0.0; 4];
        // SAFETY: `quad` has room for four f64 values.
        unsafe { _mm256_storeu_pd(quad.as_mut_ptr(), _mm256_add_pd(lo, hi)) };
        let tail: f64 = ta.iter().zip(tb).map(|(x, y)| x * y).sum();
        (quad[0] + quad[1]) + (quad[2] + quad[3]) + tail
    }

    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
        super::axpy_body(dst, src, alpha)
    }
    /// Lane-wise identical to `outer_acc_body`.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn outer_acc(row: &mut [f64], coefs: &[f64], xs: &[&[f64]]) {
        let n = row.len();
        assert!(xs.iter().all(|x| x.len() >= n));
        let blocks = n / 4;
        for b in 0..blocks {
            let j = 4 * b;
            // SAFETY: j + 4 <= n and every `x` has at least n elements.
            unsafe {
                let mut acc = _mm256_loadu_pd(row.as_ptr().add(j));
                for (c, x) in coefs.iter().zip(xs) {
                    let xv = _mm256_loadu_pd(x.as_ptr().add(j));
                    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_set1_pd(*c), xv));
                }
                _mm256_storeu_pd(row.as_mut_ptr().add(j), acc);
            }
        }
        let tail = 4 * blocks;
        let rest: Vec<&[f64]> = xs.iter().map(|x| &x[tail..]).collect();
        super::outer_acc_body(&mut row[tail..], coefs, &rest);
    }

    /// Lane-wise identical to `gemv_t_body`.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn gemv_t(out: &mut [f64], w: &[f64], g: &[f64]) {
        let k = out.len();
        let full = (g.len() / 4) * 4;
        assert!(w.len() >= g.len() * k);
        let blocks = k / 4;
        for i in (0..full).step_by(4) {
            let (g0, g1, g2, g3) = (
                _mm256_set1_pd(g[i]),
                _mm256_set1_pd(g[i + 1]),
                _mm256_set1_pd(g[i + 2]),
                _mm256_set1_pd(g[i + 3]),
            );
            for b in 0..blocks {
                let j = 4 * b;
                // SAFETY: rows i..i+4 lie inside `w` and j + 4 <= k.
                unsafe {
                    let base = w.as_ptr().add(i * k + j);
                    let w0 = _mm256_loadu_pd(base);
                    let w1 = _mm256_loadu_pd(base.add(k));
                    let w2 = _mm256_loadu_pd(base.add(2 * k));
                    let w3 = _mm256_loadu_pd(base.add(3 * k));
                    let s01 = _mm256_add_pd(_mm256_mul_pd(g0, w0), _mm256_mul_pd(g1, w1));
                    let s23 = _mm256_add_pd(_mm256_mul_pd(g2, w2), _mm256_mul_pd(g3, w3));
                    let o = _mm256_loadu_pd(out.as_ptr().add(j));
                    _mm256_storeu_pd(out.as_mut_ptr().add(j), _mm256_add_pd(o, _mm256_add_pd(s01, s23)));
                }
            }
            for j in 4 * blocks..k {
                out[j] += (g[i] * w[i * k + j] + g[i + 1] * w[(i + 1) * k + j])
                    + (g[i + 2] * w[(i + 2) * k + j] + g[i + 3] * w[(i + 3) * k + j]);
            }
        }
        for i in full..g.len() {
            super::axpy_body(out, &w[i * k..(i + 1) * k], g[i]);
        }
    }
}

/// Inner product with eight lane accumulators. The wide path only changes
/// instruction selection, not the order of additions.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { avx2::dot(a, b) };
    }
    dot_body(a, b)
}

/// `row[j] += Σ_t coefs[t] · xs[t][j]`, summed in `t` order.
pub(crate) fn outer_acc(row: &mut [f64], coefs: &[f64], xs: &[&[f64]]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { avx2::outer_acc(row, coefs, xs) };
    }
    outer_acc_body(row, coefs, xs)
}

/// `out += wᵀ g` for a row-major `w[g.len(), out.len()]`, four rows at a time.
pub(crate) fn gemv_t(out: &mut [f64], w: &[f64], g: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { avx2::gemv_t(out, w, g) };
    }
    gemv_t_body(out, w, g)
}

/// `dst += alpha · src`.
pub(crate) fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { avx2::axpy(dst, src, alpha) };
    }
    axpy_body(dst, src, alpha)
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn tensordot_identity_stack_is_noop() {
        let eye = Tensor::new(vec![2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        let h = Tensor::new(vec![2, 2], vec![0.3, -1.2, 4.0, 0.5]).unwrap();
        assert_eq!(eye.tensordot_axis_n(&h).unwrap(), h);
    }

    #[test]
    fn tensordot_scalar_case() {
        let w = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let h = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        assert_eq!(w.tensordot_axis_n(&h).unwrap().data(), &[6.0]);
    }

    #[test]
    fn tensordot_reports_both_shapes() {
        let w = Tensor::zeros(&[2, 3, 3]);
        let h = Tensor::zeros(&[3, 3]);
        match w.tensordot_axis_n(&h) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3, 3]);
                assert_eq!(rhs, vec![3, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tensordot_seq_one_hot_and_uniform() {
        let hs = Tensor::from_fn(&[3, 2, 2], |i| i as f64 * 0.5 - 1.0);
        let one_hot = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(one_hot.tensordot_seq(&hs).unwrap(), hs.index0(0).unwrap());

        let uniform = Tensor::full(&[2, 3], 1.0 / 3.0);
        let out = uniform.tensordot_seq(&hs).unwrap();
        for v in 0..2 {
            for k in 0..2 {
                let mean = (0..3).map(|t| hs.data()[(t * 2 + v) * 2 + k]).sum::<f64>() / 3.0;
                assert!((out.data()[v * 2 + k] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn var_product_cases() {
        let wx = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = wx.var_product(&Tensor::vector(vec![10.0, 100.0])).unwrap();
        assert_eq!(out.data(), &[10.0, 20.0, 300.0, 400.0]);
        assert_eq!(wx.var_product(&Tensor::full(&[2], 1.0)).unwrap(), wx);
        assert!(wx
            .var_product(&Tensor::zeros(&[2]))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert!(wx.var_product(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(Tensor::scalar(0.0).tanh().data(), &[0.0]);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
    }

    #[test]
    fn softmax_rows_basics() {
        let e = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        assert_eq!(e.softmax_rows().unwrap().data(), &[0.5, 0.5]);

        let row = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let total: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let sm = row.softmax_rows().unwrap();
        for (i, v) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert!((sm.data()[i] - v.exp() / total).abs() < 1e-12);
        }
        let shifted = row.map(|v| v + 123.0).softmax_rows().unwrap();
        for (a, b) in sm.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vec_layout_is_variable_major() {
        let h = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(h.vec().unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(h.vec().unwrap().matricize(2, 2).unwrap(), h);
        assert_eq!(Tensor::zeros(&[4]).matricize(2, 2).unwrap(), Tensor::zeros(&[2, 2]));
        assert!(Tensor::zeros(&[5]).matricize(2, 2).is_err());
    }

    #[test]
    fn concat_along_inner_axis() {
        let a = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert!(Tensor::concat(&[&a, &b], 0).is_err());
    }

    #[test]
    fn narrow_and_index() {
        let t = Tensor::from_fn(&[3, 2], |i| i as f64);
        assert_eq!(t.narrow(1, 2).unwrap().data(), &[2.0, 3.0, 4.0, 5.0]);
        assert_eq!(t.index0(2).unwrap().shape(), &[2]);
        assert!(t.narrow(2, 2).is_err());
    }
}
