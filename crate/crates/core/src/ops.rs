//! The operation set every model in this crate is written against.
//!
//! Attention, encoder blocks and the language model are generic over [`Ops`],
//! so the same code runs eagerly on [`Tensor`]s ([`Eager`]) or records onto an
//! autodiff [`Tape`](crate::autodiff::Tape).

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

pub trait Ops {
    type T: Clone;

    fn constant(&self, t: Tensor) -> Self::T;
    fn shape(&self, x: &Self::T) -> Vec<usize>;
    /// Copy of the current value.
    fn value(&self, x: &Self::T) -> Tensor;

    fn matmul(&self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    /// `a · bᵀ`
    fn matmul_t(&self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn transpose(&self, a: &Self::T) -> Result<Self::T>;
    fn scale(&self, a: &Self::T, s: f64) -> Result<Self::T>;
    fn add(&self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    /// Elementwise product with a constant tensor.
    fn mul_const(&self, a: &Self::T, c: &Tensor) -> Result<Self::T>;
    /// Broadcast-adds a per-column bias to every row.
    fn add_row(&self, a: &Self::T, bias: &Self::T) -> Result<Self::T>;
    fn relu(&self, a: &Self::T) -> Result<Self::T>;
    fn masked_softmax(&self, a: &Self::T, mask: &Mask) -> Result<Self::T>;
    fn layer_norm(&self, x: &Self::T, gain: &Self::T, bias: &Self::T, eps: f64) -> Result<Self::T>;
    fn concat_rows(&self, parts: &[&Self::T]) -> Result<Self::T>;
    fn concat_cols(&self, parts: &[&Self::T]) -> Result<Self::T>;
    fn slice_rows(&self, a: &Self::T, start: usize, end: usize) -> Result<Self::T>;
    /// Row gather; `None` produces a zero row.
    fn gather_rows(&self, a: &Self::T, index: &[Option<usize>]) -> Result<Self::T>;
    /// Sum of all entries as a `1×1` matrix.
    fn sum_all(&self, a: &Self::T) -> Result<Self::T>;
    /// Mean next-token cross-entropy (nats) of row-wise logits, as `1×1`.
    fn cross_entropy(&self, logits: &Self::T, targets: &[usize]) -> Result<Self::T>;
}

/// Direct evaluation on tensors.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Ops for Eager {
    type T = Tensor;

    fn constant(&self, t: Tensor) -> Tensor {
        t
    }

    fn shape(&self, x: &Tensor) -> Vec<usize> {
        x.shape().to_vec()
    }

    fn value(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }

    fn matmul_t(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul_t(b)
    }

    fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        a.transpose()
    }

    fn scale(&self, a: &Tensor, s: f64) -> Result<Tensor> {
        Ok(a.scale(s))
    }

    fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn mul_const(&self, a: &Tensor, c: &Tensor) -> Result<Tensor> {
        a.mul(c)
    }

    fn add_row(&self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        a.add_row(bias)
    }

    fn relu(&self, a: &Tensor) -> Result<Tensor> {
        Ok(a.map(|x| x.max(0.0)))
    }

    fn masked_softmax(&self, a: &Tensor, mask: &Mask) -> Result<Tensor> {
        a.masked_softmax(mask)
    }

    fn layer_norm(&self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        x.layer_norm(gain, bias, eps)
    }

    fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        Tensor::concat_rows(parts)
    }

    fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor> {
        Tensor::concat_cols(parts)
    }

    fn slice_rows(&self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        a.slice_rows(start, end)
    }

    fn gather_rows(&self, a: &Tensor, index: &[Option<usize>]) -> Result<Tensor> {
        a.gather_rows(index)
    }

    fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(a.sum()))
    }

    fn cross_entropy(&self, logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
        Ok(Tensor::scalar(cross_entropy_forward(logits, targets)?.0))
    }
}

/// Mean cross-entropy and the row-wise softmax probabilities.
pub(crate) fn cross_entropy_forward(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rows() != targets.len() || logits.rows() == 0 {
        return Err(Error::shape(
            "cross_entropy",
            format!(
                "{} rows of logits, {} targets",
                logits.rows(),
                targets.len()
            ),
        ));
    }
    let vocab = logits.cols();
    if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::shape(
            "cross_entropy",
            format!("target {bad} outside vocab {vocab}"),
        ));
    }
    let probs = logits.softmax()?;
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok((total / targets.len() as f64, probs))
}

/// Eager evaluation that keeps a copy of every softmax output, so callers can
/// inspect the attention (and projection) weights an algorithm produced.
#[derive(Debug, Default)]
pub struct Recording {
    softmaxes: std::cell::RefCell<Vec<(Tensor, Mask)>>,
}

impl Recording {
    pub fn new() -> Self {
        Self::default()
    }

    /// `(weights, mask)` of every softmax evaluated so far, in call order.
    pub fn softmaxes(&self) -> Vec<(Tensor, Mask)> {
        self.softmaxes.borrow().clone()
    }
}

impl Ops for Recording {
    type T = Tensor;

    fn constant(&self, t: Tensor) -> Tensor {
        t
    }

    fn shape(&self, x: &Tensor) -> Vec<usize> {
        x.shape().to_vec()
    }

    fn value(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Eager.matmul(a, b)
    }

    fn matmul_t(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Eager.matmul_t(a, b)
    }

    fn transpose(&self, a: &Tensor) -> Result<Tensor> {
        Eager.transpose(a)
    }

    fn scale(&self, a: &Tensor, s: f64) -> Result<Tensor> {
        Eager.scale(a, s)
    }

    fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        Eager.add(a, b)
    }

    fn mul_const(&self, a: &Tensor, c: &Tensor) -> Result<Tensor> {
        Eager.mul_const(a, c)
    }

    fn add_row(&self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        Eager.add_row(a, bias)
    }

    fn relu(&self, a: &Tensor) -> Result<Tensor> {
        Eager.relu(a)
    }

    fn masked_softmax(&self, a: &Tensor, mask: &Mask) -> Result<Tensor> {
        let out = Eager.masked_softmax(a, mask)?;
        self.softmaxes
            .borrow_mut()
            .push((out.clone(), mask.clone()));
        Ok(out)
    }

    fn layer_norm(&self, x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        Eager.layer_norm(x, gain, bias, eps)
    }

    fn concat_rows(&self, parts: &[&Tensor]) -> Result<Tensor> {
        Eager.concat_rows(parts)
    }

    fn concat_cols(&self, parts: &[&Tensor]) -> Result<Tensor> {
        Eager.concat_cols(parts)
    }

    fn slice_rows(&self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        Eager.slice_rows(a, start, end)
    }

    fn gather_rows(&self, a: &Tensor, index: &[Option<usize>]) -> Result<Tensor> {
        Eager.gather_rows(a, index)
    }

    fn sum_all(&self, a: &Tensor) -> Result<Tensor> {
        Eager.sum_all(a)
    }

    fn cross_entropy(&self, logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
        Eager.cross_entropy(logits, targets)
    }
}
