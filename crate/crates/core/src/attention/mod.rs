//! Long-short attention.
//!
//! Heads are plain functions of `(ops, x, params, config)`. [`multi_head`]
//! concatenates their outputs along the width and applies `W^O`.

pub mod bidirectional;
pub mod causal;
pub mod probe;
pub mod span;

use std::thread;

use crate::config::{LsConfig, Mode, Variant};
use crate::error::{Error, Result};
use crate::ops::{Eager, Ops};
use crate::params::{HeadParams, MultiHeadParams};
use crate::tensor::Tensor;

pub use bidirectional::{
    aggregate_dualln_head, aggregate_plain_head, dynamic_projection, full_attention_head,
    long_range_attention_head, sliding_window_attention_head, ProjectedKV,
};
pub use causal::{
    causal_aggregate_head, causal_full_attention_oracle, causal_segment_projection,
    project_segment, visible_segment_count, SegmentProjection,
};
pub use probe::{
    norm_ratio_probe, LayerRatios, NormProbeConfig, NormProbeReport, ProbeProjection, ProbeSample,
};
pub use span::{causal_window_span, home_start, window_span, AttentionSpan, CausalSpan};

/// `Concat(H_1, …, H_h) · W^O`.
pub fn multi_head<O, F>(ops: &O, x: &O::T, params: &MultiHeadParams<O::T>, head: F) -> Result<O::T>
where
    O: Ops,
    F: Fn(&O, &O::T, &HeadParams<O::T>) -> Result<O::T>,
{
    let outs = params
        .heads
        .iter()
        .map(|p| head(ops, x, p))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&O::T> = outs.iter().collect();
    let cat = ops.concat_cols(&refs)?;
    ops.matmul(&cat, &params.wo)
}

/// [`multi_head`] with each head evaluated on its own thread. Heads are
/// spawned in reverse order; the result is independent of scheduling.
pub fn multi_head_concurrent<F>(x: &Tensor, params: &MultiHeadParams, head: F) -> Result<Tensor>
where
    F: Fn(&Eager, &Tensor, &HeadParams) -> Result<Tensor> + Sync,
{
    let outs: Vec<Result<Tensor>> = thread::scope(|scope| {
        let handles: Vec<_> = params
            .heads
            .iter()
            .enumerate()
            .rev()
            .map(|(i, p)| {
                let head = &head;
                (i, scope.spawn(move || head(&Eager, x, p)))
            })
            .collect();
        let mut outs: Vec<Option<Result<Tensor>>> = (0..params.heads.len()).map(|_| None).collect();
        for (i, h) in handles {
            outs[i] = Some(
                h.join()
                    .unwrap_or_else(|_| Err(Error::config("head thread panicked"))),
            );
        }
        outs.into_iter()
            .map(|o| o.expect("every head joined"))
            .collect()
    });
    let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = outs.iter().collect();
    Tensor::concat_cols(&refs)?.matmul(&params.wo)
}

/// One head of the given variant. Window/projection variants restrict `cfg`
/// to their branch; long-short honors `cfg.dual_ln`; causal configs use the
/// masked oracle for `Full` and the segment-projected head otherwise.
pub fn attention_head<O: Ops>(
    ops: &O,
    x: &O::T,
    p: &HeadParams<O::T>,
    cfg: &LsConfig,
    variant: Variant,
) -> Result<O::T> {
    match (cfg.mode, variant) {
        (Mode::Bidirectional, Variant::Full) => full_attention_head(ops, x, p),
        (Mode::Causal, Variant::Full) => causal_full_attention_oracle(ops, x, p),
        (Mode::Bidirectional, v) => {
            let c = v.restrict(cfg);
            bidirectional::long_short_head(ops, x, p, &c, c.dual_ln)
        }
        (Mode::Causal, Variant::Projection) => Err(Error::config(
            "causal attention always keeps a local window (w >= l/2)",
        )),
        (Mode::Causal, v) => causal_aggregate_head(ops, x, p, &v.restrict(cfg)),
    }
}
