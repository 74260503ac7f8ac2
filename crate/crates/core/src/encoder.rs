//! Pre-LN transformer blocks built on [`attention_head`].

use crate::attention::{attention_head, multi_head};
use crate::config::{LsConfig, Variant};
use crate::error::Result;
use crate::ops::Ops;
use crate::params::BlockParams;

pub fn block_forward<O: Ops>(
    ops: &O,
    x: &O::T,
    p: &BlockParams<O::T>,
    cfg: &LsConfig,
    variant: Variant,
) -> Result<O::T> {
    let eps = cfg.ln_eps;
    let normed = ops.layer_norm(x, &p.ln_attn.gain, &p.ln_attn.bias, eps)?;
    let attn = multi_head(ops, &normed, &p.attn, |ops, x, hp| {
        attention_head(ops, x, hp, cfg, variant)
    })?;
    let h = ops.add(x, &attn)?;

    let normed = ops.layer_norm(&h, &p.ln_ffn.gain, &p.ln_ffn.bias, eps)?;
    let f = ops.matmul(&normed, &p.w1)?;
    let f = ops.add_row(&f, &p.b1)?;
    let f = ops.relu(&f)?;
    let f = ops.matmul(&f, &p.w2)?;
    let f = ops.add_row(&f, &p.b2)?;
    ops.add(&h, &f)
}

pub fn encoder_forward<O: Ops>(
    ops: &O,
    x: &O::T,
    blocks: &[BlockParams<O::T>],
    cfg: &LsConfig,
    variant: Variant,
) -> Result<O::T> {
    let mut h = x.clone();
    for b in blocks {
        h = block_forward(ops, &h, b, cfg, variant)?;
    }
    Ok(h)
}
