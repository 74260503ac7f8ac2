//! Dense row-major `f64` arrays and the primitives the attention math is built
//! from.
//!
//! Most operations treat a tensor as a matrix: the last dimension is the row
//! width and all leading dimensions are flattened into rows. Dimensions of size
//! zero are allowed so that empty operands (an `r = 0` projection, a query with
//! no visible segments) flow through concatenation unchanged.

use std::fmt;

use crate::counters;
use crate::error::{Error, Result};

/// Epsilon added to the variance inside the square root of layer normalization.
pub const LN_EPS: f64 = 1e-5;

fn try_zeros(len: usize) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len).map_err(|_| Error::Alloc {
        bytes: len.saturating_mul(std::mem::size_of::<f64>()),
    })?;
    v.resize(len, 0.0);
    Ok(v)
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= 64 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{} values]", self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if shape.is_empty() || expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!(
                    "shape {shape:?} needs {expected} values, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub(crate) fn try_zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let data = try_zeros(shape.iter().product())?;
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Tensor::from_rows", "ragged rows"));
        }
        Tensor::new([rows.len(), cols], rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Width of the last dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor shape is never empty")
    }

    /// Product of all leading dimensions.
    pub fn rows(&self) -> usize {
        self.shape[..self.shape.len() - 1].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(
                op,
                format!("expected a matrix, got {:?}", self.shape),
            )),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Euclidean norm of every row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows())
            .map(|i| self.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// Matrix product. Each output entry accumulates left to right over the
    /// inner dimension starting from zero.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, p) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} times {k2}x{p}")));
        }
        let mut out = try_zeros(m * p)?;
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * p..(i + 1) * p];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = &rhs.data[kk * p..(kk + 1) * p];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        counters::add_macs(m * k * p);
        Ok(Tensor {
            shape: vec![m, p],
            data: out,
        })
    }

    /// `self · rhsᵀ`, with the same accumulation order as [`Tensor::matmul`].
    pub fn matmul_t(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul_t")?;
        let (p, k2) = rhs.dims2("matmul_t")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_t",
                format!("{m}x{k} times ({p}x{k2})ᵀ"),
            ));
        }
        let mut out = try_zeros(m * p)?;
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..p {
                let b_row = &rhs.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out[i * p + j] = acc;
            }
        }
        counters::add_macs(m * k * p);
        Ok(Tensor {
            shape: vec![m, p],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let mut out = try_zeros(m * n)?;
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    fn zip_with(
        &self,
        rhs: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, rhs.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "mul", |a, b| a * b)
    }

    pub(crate) fn add_assign(&mut self, rhs: &Tensor) {
        debug_assert_eq!(self.shape, rhs.shape);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }

    /// Adds `bias` (one value per column) to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::shape(
                "add_row",
                format!("{} columns, bias of {}", c, bias.len()),
            ));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(c.max(1)) {
            for (x, b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(out)
    }

    /// Column sums as a `1×cols` matrix.
    pub fn sum_rows(&self) -> Tensor {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for i in 0..self.rows() {
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        Tensor {
            shape: vec![1, c],
            data: out,
        }
    }

    /// Softmax along the last dimension restricted to attendable positions.
    ///
    /// Masked entries come out exactly zero. Each row subtracts its maximum
    /// attendable logit before exponentiating.
    pub fn masked_softmax(&self, mask: &Mask) -> Result<Tensor> {
        if mask.shape() != self.shape() {
            return Err(Error::shape(
                "masked_softmax",
                format!("logits {:?}, mask {:?}", self.shape, mask.shape()),
            ));
        }
        let c = self.cols();
        let mut out = try_zeros(self.data.len())?;
        for i in 0..self.rows() {
            let logits = self.row(i);
            let allowed = mask.row(i);
            let mut max = f64::NEG_INFINITY;
            let mut any = false;
            for (&x, &ok) in logits.iter().zip(allowed) {
                if ok {
                    if !x.is_finite() {
                        return Err(Error::NonFinite(format!("softmax logit {x} in row {i}")));
                    }
                    any = true;
                    max = max.max(x);
                }
            }
            if !any {
                return Err(Error::FullyMasked { row: i });
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut total = 0.0;
            for ((o, &x), &ok) in o.iter_mut().zip(logits).zip(allowed) {
                if ok {
                    *o = (x - max).exp();
                    total += *o;
                }
            }
            for o in o.iter_mut() {
                *o /= total;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Plain softmax along the last dimension.
    pub fn softmax(&self) -> Result<Tensor> {
        self.masked_softmax(&Mask::all(self.shape.clone()))
    }

    /// Layer normalization over the last dimension with population variance
    /// and `eps` inside the square root.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        Ok(self.layer_norm_with_stats(gain, bias, eps)?.0)
    }

    /// Returns the normalized output, the pre-affine normalized values and the
    /// per-row inverse standard deviations.
    pub(crate) fn layer_norm_with_stats(
        &self,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<(Tensor, Tensor, Vec<f64>)> {
        let d = self.cols();
        if gain.len() != d || bias.len() != d {
            return Err(Error::shape(
                "layer_norm",
                format!("width {d}, gain {}, bias {}", gain.len(), bias.len()),
            ));
        }
        if d == 0 {
            return Err(Error::shape("layer_norm", "zero-width rows"));
        }
        let rows = self.rows();
        let mut out = try_zeros(self.data.len())?;
        let mut xhat = try_zeros(self.data.len())?;
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let x = self.row(i);
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (x[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = h * gain.data[j] + bias.data[j];
            }
        }
        counters::add_norm_elements(rows * d);
        let shape = self.shape.clone();
        Ok((
            Tensor {
                shape: shape.clone(),
                data: out,
            },
            Tensor { shape, data: xhat },
            inv_std,
        ))
    }

    /// Stacks matrices with equal width on top of each other.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no operands"))?;
        let c = first.cols();
        let mut rows = 0;
        for p in parts {
            if p.shape.len() != 2 || p.cols() != c {
                return Err(Error::shape(
                    "concat_rows",
                    format!("operand {:?} does not have width {c}", p.shape),
                ));
            }
            rows += p.rows();
        }
        let mut data = Vec::new();
        data.try_reserve_exact(rows * c).map_err(|_| Error::Alloc {
            bytes: rows * c * 8,
        })?;
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: vec![rows, c],
            data,
        })
    }

    /// Places matrices with equal row count side by side.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_cols", "no operands"))?;
        let rows = first.rows();
        if parts.iter().any(|p| p.shape.len() != 2 || p.rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = try_zeros(rows * cols)?;
        let mut offset = 0;
        for p in parts {
            let pc = p.cols();
            for i in 0..rows {
                data[i * cols + offset..i * cols + offset + pc].copy_from_slice(p.row(i));
            }
            offset += pc;
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (m, c) = self.dims2("slice_rows")?;
        if start > end || end > m {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}..{end} of {m} rows"),
            ));
        }
        Ok(Tensor {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        })
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (m, c) = self.dims2("slice_cols")?;
        if start > end || end > c {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {c} columns"),
            ));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Ok(Tensor {
            shape: vec![m, w],
            data,
        })
    }

    /// Picks rows by index; `None` yields a zero row (padding).
    pub fn gather_rows(&self, index: &[Option<usize>]) -> Result<Tensor> {
        let (m, c) = self.dims2("gather_rows")?;
        let mut data = try_zeros(index.len() * c)?;
        for (k, ix) in index.iter().enumerate() {
            if let Some(i) = *ix {
                if i >= m {
                    return Err(Error::shape("gather_rows", format!("row {i} of {m}")));
                }
                data[k * c..(k + 1) * c].copy_from_slice(self.row(i));
            }
        }
        Ok(Tensor {
            shape: vec![index.len(), c],
            data,
        })
    }
}

/// Boolean attendability mask; `true` marks a position that may be attended.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<bool>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "Mask::new",
                format!("shape {shape:?}, {} values", data.len()),
            ));
        }
        Ok(Mask { shape, data })
    }

    pub fn all(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Mask {
            shape,
            data: vec![true; len],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mask {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn cols(&self) -> usize {
        *self.shape.last().expect("mask shape is never empty")
    }

    pub fn row(&self, i: usize) -> &[bool] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols() + j]
    }
}
