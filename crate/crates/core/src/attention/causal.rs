//! Autoregressive attention.
//!
//! The global branch is computed per segment of `l` tokens: segment `s`
//! covers positions `[s·l, (s+1)·l)` and is projected once with its own
//! softmax over those `l` tokens. Query `t` sees segments `0..⌊t/l⌋`, so its
//! own segment is always excluded and the causal window fills the gap.

use crate::attention::bidirectional::{attend, head_dim, project, seq_len};
use crate::attention::span::causal_slots;
use crate::config::{LsConfig, Mode};
use crate::error::{Error, Result};
use crate::ops::{Eager, Ops};
use crate::params::HeadParams;
use crate::tensor::{Mask, Tensor};

/// Number of segments some query of an `n`-token sequence can see.
pub fn visible_segment_count(n: usize, l: usize) -> usize {
    if n == 0 {
        0
    } else {
        (n - 1) / l
    }
}

/// Per-segment projections of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentProjection {
    pub l: usize,
    /// `l×r` projection weights of each segment; every column sums to one.
    pub p: Vec<Tensor>,
    /// `r×d_k` projected keys of each segment.
    pub kbar: Vec<Tensor>,
    pub vbar: Vec<Tensor>,
}

impl SegmentProjection {
    pub fn segments(&self) -> usize {
        self.p.len()
    }

    /// `⌊t/l⌋`, capped at the number of computed segments.
    pub fn visible_segments(&self, t: usize) -> usize {
        (t / self.l).min(self.segments())
    }

    /// Projected keys visible to query `t`, stacked in segment order.
    pub fn keys_for(&self, t: usize) -> Result<Tensor> {
        let s = self.visible_segments(t);
        let dk = self.kbar.first().map_or(0, Tensor::cols);
        if s == 0 {
            return Ok(Tensor::zeros([0, dk]));
        }
        let refs: Vec<&Tensor> = self.kbar[..s].iter().collect();
        Tensor::concat_rows(&refs)
    }
}

fn require_causal(cfg: &LsConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != Mode::Causal {
        return Err(Error::config("expected a causal config"));
    }
    Ok(())
}

/// Batched segment projections: `X·W^P` is computed once for all covered
/// rows, then each segment gets its own softmax. Returns the per-segment
/// `pᵀ` and the stacked `kbar`/`vbar` (`segments·r × d_k`).
fn segment_kv<O: Ops>(
    ops: &O,
    x: &O::T,
    xk: &O::T,
    xv: &O::T,
    wp: &O::T,
    l: usize,
    segments: usize,
) -> Result<(Vec<O::T>, O::T, O::T)> {
    let covered = ops.slice_rows(x, 0, segments * l)?;
    let logits = ops.matmul(&covered, wp)?;
    let mut pts = Vec::with_capacity(segments);
    let mut kbars = Vec::with_capacity(segments);
    let mut vbars = Vec::with_capacity(segments);
    for s in 0..segments {
        let (a, b) = (s * l, (s + 1) * l);
        let seg_logits = ops.slice_rows(&logits, a, b)?;
        let (pt, kb, vb) = crate::attention::bidirectional::project_with_logits(
            ops,
            &seg_logits,
            &ops.slice_rows(xk, a, b)?,
            &ops.slice_rows(xv, a, b)?,
        )?;
        pts.push(pt);
        kbars.push(kb);
        vbars.push(vb);
    }
    let kref: Vec<&O::T> = kbars.iter().collect();
    let vref: Vec<&O::T> = vbars.iter().collect();
    Ok((pts, ops.concat_rows(&kref)?, ops.concat_rows(&vref)?))
}

/// Projects every segment that some query can see, in one pass.
pub fn causal_segment_projection(
    x: &Tensor,
    p: &HeadParams,
    cfg: &LsConfig,
) -> Result<SegmentProjection> {
    require_causal(cfg)?;
    let ops = Eager;
    let n = x.rows();
    let segments = visible_segment_count(n, cfg.l);
    let r = cfg.r;
    let mut out = SegmentProjection {
        l: cfg.l,
        p: Vec::with_capacity(segments),
        kbar: Vec::with_capacity(segments),
        vbar: Vec::with_capacity(segments),
    };
    if segments == 0 || r == 0 {
        return Ok(out);
    }
    let xk = x.matmul(&p.wk)?;
    let xv = x.matmul(&p.wv)?;
    let (pts, kbar, vbar) = segment_kv(&ops, x, &xk, &xv, &p.wp, cfg.l, segments)?;
    for (s, pt) in pts.iter().enumerate() {
        out.p.push(pt.transpose()?);
        out.kbar.push(kbar.slice_rows(s * r, (s + 1) * r)?);
        out.vbar.push(vbar.slice_rows(s * r, (s + 1) * r)?);
    }
    Ok(out)
}

/// Projects segment `s` on its own, reading only tokens `[s·l, (s+1)·l)`.
/// Returns `(p, kbar, vbar)`.
pub fn project_segment(
    x: &Tensor,
    p: &HeadParams,
    cfg: &LsConfig,
    s: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    require_causal(cfg)?;
    let (a, b) = (s * cfg.l, (s + 1) * cfg.l);
    let seg = x.slice_rows(a, b)?;
    let xk = seg.matmul(&p.wk)?;
    let xv = seg.matmul(&p.wv)?;
    let (pt, kbar, vbar) = project(&Eager, &seg, &xk, &xv, &p.wp)?;
    Ok((pt.transpose()?, kbar, vbar))
}

/// Causal long-short head: per query, one softmax over its causal window and
/// the projected tokens of all fully past segments. Honors `cfg.dual_ln`.
pub fn causal_aggregate_head<O: Ops>(
    ops: &O,
    x: &O::T,
    p: &HeadParams<O::T>,
    cfg: &LsConfig,
) -> Result<O::T> {
    require_causal(cfg)?;
    let n = seq_len(ops, x);
    let dk = head_dim(ops, p);
    let (w, r, l) = (cfg.w, cfg.r, cfg.l);

    let q = ops.matmul(x, &p.wq)?;
    let mut k = ops.matmul(x, &p.wk)?;
    let mut v = ops.matmul(x, &p.wv)?;

    let segments = if r > 0 {
        visible_segment_count(n, l)
    } else {
        0
    };
    let mut global = if segments > 0 {
        let (_, kbar, vbar) = segment_kv(ops, x, &k, &v, &p.wp, l, segments)?;
        Some((kbar, vbar))
    } else {
        None
    };

    if cfg.dual_ln {
        let eps = cfg.ln_eps;
        let ln = &p.ln_local;
        k = ops.layer_norm(&k, &ln.gain, &ln.bias, eps)?;
        v = ops.layer_norm(&v, &ln.gain, &ln.bias, eps)?;
        if let Some((kbar, vbar)) = &mut global {
            let ln = &p.ln_global;
            *kbar = ops.layer_norm(kbar, &ln.gain, &ln.bias, eps)?;
            *vbar = ops.layer_norm(vbar, &ln.gain, &ln.bias, eps)?;
        }
    }

    let mut blocks = Vec::with_capacity(n.div_ceil(w));
    for start in (0..n).step_by(w) {
        let end = (start + w).min(n);
        let slots = causal_slots(start, w, n);
        let qb = ops.slice_rows(&q, start, end)?;
        let kl = ops.gather_rows(&k, &slots)?;
        let vl = ops.gather_rows(&v, &slots)?;
        let seen = ((end - 1) / l).min(segments);
        let (keys, values) = match &global {
            Some((kbar, vbar)) if seen > 0 => {
                let kg = ops.slice_rows(kbar, 0, seen * r)?;
                let vg = ops.slice_rows(vbar, 0, seen * r)?;
                (ops.concat_rows(&[&kl, &kg])?, ops.concat_rows(&[&vl, &vg])?)
            }
            _ => (kl, vl),
        };
        let local = slots.len();
        let mask = Mask::from_fn(end - start, local + seen * r, |i, j| {
            let t = start + i;
            if j < local {
                slots[j].is_some_and(|pos| pos <= t)
            } else {
                (j - local) / r < t / l
            }
        });
        blocks.push(attend(ops, &qb, &keys, &values, &mask, dk)?);
    }
    let refs: Vec<&O::T> = blocks.iter().collect();
    ops.concat_rows(&refs)
}

/// Exact attention with every position after the query masked.
pub fn causal_full_attention_oracle<O: Ops>(
    ops: &O,
    x: &O::T,
    p: &HeadParams<O::T>,
) -> Result<O::T> {
    let n = seq_len(ops, x);
    let q = ops.matmul(x, &p.wq)?;
    let k = ops.matmul(x, &p.wk)?;
    let v = ops.matmul(x, &p.wv)?;
    attend(
        ops,
        &q,
        &k,
        &v,
        &Mask::from_fn(n, n, |i, j| j <= i),
        head_dim(ops, p),
    )
}
