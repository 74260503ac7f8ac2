//! Bidirectional attention heads: the exact softmax oracle, the segment-wise
//! sliding window, the dynamic low-rank projection and their joint
//! aggregation with or without DualLN.

use crate::attention::span::bidirectional_slots;
use crate::config::{LsConfig, Mode};
use crate::error::{Error, Result};
use crate::ops::Ops;
use crate::params::HeadParams;
use crate::tensor::{Mask, Tensor};

/// `softmax(q·keysᵀ / √d_k) · values` with masking.
pub(crate) fn attend<O: Ops>(
    ops: &O,
    q: &O::T,
    keys: &O::T,
    values: &O::T,
    mask: &Mask,
    dk: usize,
) -> Result<O::T> {
    let scores = ops.matmul_t(q, keys)?;
    let scores = ops.scale(&scores, 1.0 / (dk as f64).sqrt())?;
    let weights = ops.masked_softmax(&scores, mask)?;
    ops.matmul(&weights, values)
}

pub(crate) fn head_dim<O: Ops>(ops: &O, p: &HeadParams<O::T>) -> usize {
    ops.shape(&p.wq)[1]
}

pub(crate) fn seq_len<O: Ops>(ops: &O, x: &O::T) -> usize {
    ops.shape(x)[0]
}

/// Exact scaled dot-product attention of one head with `Q = K = V = X`.
pub fn full_attention_head<O: Ops>(ops: &O, x: &O::T, p: &HeadParams<O::T>) -> Result<O::T> {
    let n = seq_len(ops, x);
    let q = ops.matmul(x, &p.wq)?;
    let k = ops.matmul(x, &p.wk)?;
    let v = ops.matmul(x, &p.wv)?;
    attend(ops, &q, &k, &v, &Mask::all([n, n]), head_dim(ops, p))
}

/// Dynamic projection of one head.
///
/// `p` is `n×r` and each of its columns is a softmax over the `n` tokens;
/// `kbar = pᵀ·X·W^K` and `vbar = pᵀ·X·W^V` are `r×d_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedKV<T = Tensor> {
    pub p: T,
    pub kbar: T,
    pub vbar: T,
}

impl ProjectedKV<Tensor> {
    pub fn rank(&self) -> usize {
        self.kbar.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rank() == 0
    }
}

/// Projects already-computed keys/values with weights derived from
/// `logits` (`n×r`). Returns `(pᵀ, kbar, vbar)`.
pub(crate) fn project_with_logits<O: Ops>(
    ops: &O,
    logits: &O::T,
    xk: &O::T,
    xv: &O::T,
) -> Result<(O::T, O::T, O::T)> {
    let lt = ops.transpose(logits)?;
    let shape = ops.shape(&lt);
    let pt = ops.masked_softmax(&lt, &Mask::all(shape))?;
    let kbar = ops.matmul(&pt, xk)?;
    let vbar = ops.matmul(&pt, xv)?;
    Ok((pt, kbar, vbar))
}

pub(crate) fn project<O: Ops>(
    ops: &O,
    x: &O::T,
    xk: &O::T,
    xv: &O::T,
    wp: &O::T,
) -> Result<(O::T, O::T, O::T)> {
    let logits = ops.matmul(x, wp)?;
    project_with_logits(ops, &logits, xk, xv)
}

/// Dynamic low-rank projection of the keys and values. With `r = 0` the
/// result is empty and the global branch contributes nothing.
pub fn dynamic_projection<O: Ops>(
    ops: &O,
    x: &O::T,
    p: &HeadParams<O::T>,
    cfg: &LsConfig,
) -> Result<ProjectedKV<O::T>> {
    if ops.shape(&p.wp)[1] != cfg.r {
        return Err(Error::config(format!(
            "projection weights have rank {}, config says {}",
            ops.shape(&p.wp)[1],
            cfg.r
        )));
    }
    let xk = ops.matmul(x, &p.wk)?;
    let xv = ops.matmul(x, &p.wv)?;
    let (pt, kbar, vbar) = project(ops, x, &xk, &xv, &p.wp)?;
    Ok(ProjectedKV {
        p: ops.transpose(&pt)?,
        kbar,
        vbar,
    })
}

/// Every query attends the same `r` projected keys and values.
pub fn long_range_attention_head<O: Ops>(
    ops: &O,
    x: &O::T,
    pkv: &ProjectedKV<O::T>,
    p: &HeadParams<O::T>,
) -> Result<O::T> {
    let n = seq_len(ops, x);
    let r = ops.shape(&pkv.kbar)[0];
    let q = ops.matmul(x, &p.wq)?;
    attend(
        ops,
        &q,
        &pkv.kbar,
        &pkv.vbar,
        &Mask::all([n, r]),
        head_dim(ops, p),
    )
}

/// Joint softmax over each query's window slots and the projected tokens.
///
/// This single routine backs the window-only (`r = 0`), projection-only
/// (`w = 0`) and aggregated heads, so the degenerate configurations agree
/// bit for bit.
pub(crate) fn long_short_head<O: Ops>(
    ops: &O,
    x: &O::T,
    p: &HeadParams<O::T>,
    cfg: &LsConfig,
    dual_ln: bool,
) -> Result<O::T> {
    cfg.validate()?;
    let n = seq_len(ops, x);
    let dk = head_dim(ops, p);
    let (w, r) = (cfg.w, cfg.r);

    let q = ops.matmul(x, &p.wq)?;
    let mut k = ops.matmul(x, &p.wk)?;
    let mut v = ops.matmul(x, &p.wv)?;

    let mut global = if r > 0 {
        let (_, kbar, vbar) = project(ops, x, &k, &v, &p.wp)?;
        Some((kbar, vbar))
    } else {
        None
    };

    if dual_ln {
        let eps = cfg.ln_eps;
        if w > 0 {
            let ln = &p.ln_local;
            k = ops.layer_norm(&k, &ln.gain, &ln.bias, eps)?;
            v = ops.layer_norm(&v, &ln.gain, &ln.bias, eps)?;
        }
        if let Some((kbar, vbar)) = &mut global {
            let ln = &p.ln_global;
            *kbar = ops.layer_norm(kbar, &ln.gain, &ln.bias, eps)?;
            *vbar = ops.layer_norm(vbar, &ln.gain, &ln.bias, eps)?;
        }
    }

    if w == 0 {
        let (kbar, vbar) = global.expect("validated: r > 0 when w = 0");
        return attend(ops, &q, &kbar, &vbar, &Mask::all([n, r]), dk);
    }

    let mut blocks = Vec::with_capacity(n.div_ceil(w));
    for start in (0..n).step_by(w) {
        let end = (start + w).min(n);
        let slots = bidirectional_slots(start, w, n);
        let qb = ops.slice_rows(&q, start, end)?;
        let kl = ops.gather_rows(&k, &slots)?;
        let vl = ops.gather_rows(&v, &slots)?;
        let (keys, values) = match &global {
            Some((kbar, vbar)) => (
                ops.concat_rows(&[&kl, kbar])?,
                ops.concat_rows(&[&vl, vbar])?,
            ),
            None => (kl, vl),
        };
        let local = slots.len();
        let width = local + if global.is_some() { r } else { 0 };
        let mask = Mask::from_fn(end - start, width, |_, j| j >= local || slots[j].is_some());
        blocks.push(attend(ops, &qb, &keys, &values, &mask, dk)?);
    }
    let refs: Vec<&O::T> = blocks.iter().collect();
    ops.concat_rows(&refs)
}

fn require_bidirectional(cfg: &LsConfig) -> Result<()> {
    if cfg.mode != Mode::Bidirectional {
        return Err(Error::config("expected a bidirectional config"));
    }
    Ok(())
}

/// Segment-wise sliding-window attention: each query sees the `2w` slots of
/// its home segment's span, padding masked.
pub fn sliding_window_attention_head<O: Ops>(
    ops: &O,
    x: &O::T,
    p: &HeadParams<O::T>,
    cfg: &LsConfig,
) -> Result<O::T> {
    require_bidirectional(cfg)?;
    if cfg.w < 2 {
        return Err(Error::config("sliding-window attention needs w >= 2"));
    }
    let window_only = LsConfig {
        r: 0,
        ..cfg.clone()
    };
    long_short_head(ops, x, p, &window_only, false)
}

/// Joint attention over `[K̃_t·W^K ; K̄]` and `[Ṽ_t·W^V ; V̄]`.
pub fn aggregate_plain_head<O: Ops>(
    ops: &O,
    x: &O::T,
    p: &HeadParams<O::T>,
    cfg: &LsConfig,
) -> Result<O::T> {
    require_bidirectional(cfg)?;
    long_short_head(ops, x, p, cfg, false)
}

/// Joint attention with the local keys/values normalized by `ln_local` and
/// the projected ones by `ln_global` before concatenation.
pub fn aggregate_dualln_head<O: Ops>(
    ops: &O,
    x: &O::T,
    p: &HeadParams<O::T>,
    cfg: &LsConfig,
) -> Result<O::T> {
    require_bidirectional(cfg)?;
    long_short_head(ops, x, p, cfg, true)
}
