//! Norm ratio between local window and projected key/value embeddings at
//! initialization.
//!
//! Each projected row is a convex combination of zero-mean rows, so without
//! normalization its norm shrinks relative to the window rows unless the
//! combination puts all its weight on a single token.

use crate::attention::bidirectional::{project, project_with_logits};
use crate::config::{LsConfig, Mode, Variant};
use crate::encoder::block_forward;
use crate::error::{Error, Result};
use crate::ops::Eager;
use crate::params::{BlockParams, LnParams};
use crate::rng::{InitScheme, Rng};
use crate::tensor::Tensor;

/// How the projection weights are formed during the probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeProjection {
    /// `softmax(X·W^P)` with freshly initialized `W^P`.
    Learned,
    /// Column `j` puts all weight on token `j` (needs `r = n`).
    OneHot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormProbeConfig {
    /// Bidirectional layer config; `dual_ln` is ignored (both settings run).
    pub attn: LsConfig,
    pub layers: usize,
    pub ffn: usize,
    pub projection: ProbeProjection,
}

impl NormProbeConfig {
    pub fn new(attn: LsConfig, layers: usize) -> Self {
        let ffn = 2 * attn.d;
        NormProbeConfig {
            attn,
            layers,
            ffn,
            projection: ProbeProjection::Learned,
        }
    }
}

/// Ratio for one (layer, seed, DualLN setting), averaged over heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSample {
    pub layer: usize,
    pub seed: u64,
    pub dual_ln: bool,
    pub key_ratio: f64,
    pub value_ratio: f64,
}

/// Mean over seeds for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRatios {
    pub layer: usize,
    pub dual_ln: bool,
    pub key_ratio: f64,
    pub value_ratio: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormProbeReport {
    pub samples: Vec<ProbeSample>,
    pub without_dual_ln: Vec<LayerRatios>,
    pub with_dual_ln: Vec<LayerRatios>,
}

impl NormProbeReport {
    pub fn layers(&self, dual_ln: bool) -> &[LayerRatios] {
        if dual_ln {
            &self.with_dual_ln
        } else {
            &self.without_dual_ln
        }
    }

    /// Average of the per-layer key ratios.
    pub fn mean_key_ratio(&self, dual_ln: bool) -> f64 {
        let l = self.layers(dual_ln);
        l.iter().map(|r| r.key_ratio).sum::<f64>() / l.len() as f64
    }
}

fn mean_row_norm(t: &Tensor) -> f64 {
    let norms = t.row_norms();
    norms.iter().sum::<f64>() / norms.len() as f64
}

/// Runs the probe over `seeds` for both DualLN settings.
///
/// Layer inputs start as standard normal tokens; each layer sees them through
/// its pre-attention layer norm (unit gain, zero bias), and the hidden state is
/// carried to the next layer by the initialized long-short block.
pub fn norm_ratio_probe(cfg: &NormProbeConfig, seeds: &[u64]) -> Result<NormProbeReport> {
    let attn = &cfg.attn;
    attn.validate()?;
    if attn.mode != Mode::Bidirectional || attn.r == 0 {
        return Err(Error::config(
            "the norm probe needs a bidirectional config with r >= 1",
        ));
    }
    if cfg.projection == ProbeProjection::OneHot && attn.r != attn.n {
        return Err(Error::config("one-hot projection needs r = n"));
    }
    if seeds.is_empty() || cfg.layers == 0 {
        return Err(Error::config(
            "the norm probe needs at least one seed and one layer",
        ));
    }

    let ops = Eager;
    let mut samples = Vec::new();
    for dual_ln in [false, true] {
        let layer_cfg = attn.clone().with_dual_ln(dual_ln);
        for &seed in seeds {
            let mut rng = Rng::new(seed);
            let blocks: Vec<BlockParams> = (0..cfg.layers)
                .map(|_| BlockParams::init(&mut rng, &layer_cfg, cfg.ffn, InitScheme::default()))
                .collect();
            let mut h = rng.normal_matrix(attn.n, attn.d);
            for (layer, block) in blocks.iter().enumerate() {
                let x = h.layer_norm(&block.ln_attn.gain, &block.ln_attn.bias, attn.ln_eps)?;
                let (mut key_ratio, mut value_ratio) = (0.0, 0.0);
                for head in &block.attn.heads {
                    let mut k = x.matmul(&head.wk)?;
                    let mut v = x.matmul(&head.wv)?;
                    let (_, mut kbar, mut vbar) = match cfg.projection {
                        ProbeProjection::Learned => project(&ops, &x, &k, &v, &head.wp)?,
                        ProbeProjection::OneHot => {
                            let logits =
                                Tensor::from_fn(
                                    attn.n,
                                    attn.r,
                                    |i, j| if i == j { 1e3 } else { 0.0 },
                                );
                            project_with_logits(&ops, &logits, &k, &v)?
                        }
                    };
                    if dual_ln {
                        let norm = |t: &Tensor, ln: &LnParams| {
                            t.layer_norm(&ln.gain, &ln.bias, attn.ln_eps)
                        };
                        k = norm(&k, &head.ln_local)?;
                        v = norm(&v, &head.ln_local)?;
                        kbar = norm(&kbar, &head.ln_global)?;
                        vbar = norm(&vbar, &head.ln_global)?;
                    }
                    key_ratio += mean_row_norm(&k) / mean_row_norm(&kbar);
                    value_ratio += mean_row_norm(&v) / mean_row_norm(&vbar);
                }
                let heads = block.attn.heads.len() as f64;
                samples.push(ProbeSample {
                    layer,
                    seed,
                    dual_ln,
                    key_ratio: key_ratio / heads,
                    value_ratio: value_ratio / heads,
                });
                h = block_forward(&ops, &h, block, &layer_cfg, Variant::LongShort)?;
            }
        }
    }

    let summarize = |dual_ln: bool| -> Vec<LayerRatios> {
        (0..cfg.layers)
            .map(|layer| {
                let rows: Vec<&ProbeSample> = samples
                    .iter()
                    .filter(|s| s.layer == layer && s.dual_ln == dual_ln)
                    .collect();
                let k = rows.len() as f64;
                LayerRatios {
                    layer,
                    dual_ln,
                    key_ratio: rows.iter().map(|s| s.key_ratio).sum::<f64>() / k,
                    value_ratio: rows.iter().map(|s| s.value_ratio).sum::<f64>() / k,
                    seeds: rows.len(),
                }
            })
            .collect()
    };
    Ok(NormProbeReport {
        without_dual_ln: summarize(false),
        with_dual_ln: summarize(true),
        samples,
    })
}
