//! Exact FLOP accounting.
//!
//! Convention: one multiply-accumulate of a matrix product is one FLOP, and
//! every element normalized by a layer norm costs four (mean, variance,
//! normalize, affine). Softmax, biases, residuals and activations are free.
//! Embeddings and classifier heads are outside the encoder and not counted.

use std::fmt;

use lsattn_core::attention::visible_segment_count;
use lsattn_core::counters::{self, OpCounts};
use lsattn_core::encoder::encoder_forward;
use lsattn_core::{BlockParams, Eager, Error, InitScheme, LsConfig, Mode, Result, Rng, Variant};

/// FLOPs charged per layer-normalized element.
pub const LN_FLOPS_PER_ELEMENT: u64 = 4;

/// An encoder stack of identical long-short blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub layers: usize,
    pub d: usize,
    pub h: usize,
    pub ffn: usize,
    pub n: usize,
    pub w: usize,
    pub r: usize,
    /// Causal segment length.
    pub l: usize,
    pub mode: Mode,
    pub variant: Variant,
    pub dual_ln: bool,
    /// Independent sequences encoded per example (two for retrieval).
    pub docs: usize,
}

impl ArchSpec {
    /// The attention config each block runs, restricted to the variant's branches.
    pub fn attn(&self) -> LsConfig {
        let base = match self.mode {
            Mode::Bidirectional => LsConfig::bidirectional(self.n, self.d, self.h, self.w, self.r),
            Mode::Causal => LsConfig::causal(self.n, self.d, self.h, self.w, self.r, self.l),
        };
        self.variant.restrict(&base.with_dual_ln(self.dual_ln))
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.ffn == 0 || self.n == 0 || self.docs == 0 {
            return Err(Error::Config(
                "layers, ffn, n and docs must be positive".into(),
            ));
        }
        if self.variant == Variant::Full {
            // Window and rank are unused; only the widths matter.
            if self.h == 0 || !self.d.is_multiple_of(self.h) {
                return Err(Error::Config(format!(
                    "d={} is not a multiple of h={}",
                    self.d, self.h
                )));
            }
            return Ok(());
        }
        if self.mode == Mode::Causal && self.variant == Variant::Projection {
            return Err(Error::Config(
                "causal attention always keeps a local window".into(),
            ));
        }
        self.attn().validate()
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} n={} layers={} d={} h={} ffn={} w={} r={}",
            self.mode, self.variant, self.n, self.layers, self.d, self.h, self.ffn, self.w, self.r
        )?;
        if self.mode == Mode::Causal {
            write!(f, " l={}", self.l)?;
        }
        if self.docs > 1 {
            write!(f, " docs={}", self.docs)?;
        }
        Ok(())
    }
}

/// Per-layer FLOPs by component, summed over heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Components {
    pub qkv: u64,
    /// Query-key products against window (or all) keys.
    pub scores: u64,
    /// Attention-weighted sums of window (or all) values.
    pub values: u64,
    /// `X·W^P` plus the projected keys and values.
    pub projection: u64,
    pub projected_scores: u64,
    pub projected_values: u64,
    pub output: u64,
    pub ffn: u64,
    pub layer_norm: u64,
}

impl Components {
    pub fn named(&self) -> [(&'static str, u64); 9] {
        [
            ("qkv", self.qkv),
            ("scores", self.scores),
            ("values", self.values),
            ("projection", self.projection),
            ("projected_scores", self.projected_scores),
            ("projected_values", self.projected_values),
            ("output", self.output),
            ("ffn", self.ffn),
            ("layer_norm", self.layer_norm),
        ]
    }

    pub fn sum(&self) -> u64 {
        self.named().iter().map(|(_, v)| v).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopReport {
    pub per_layer: Components,
    pub layers: u64,
    pub docs: u64,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.per_layer.sum() * self.layers * self.docs
    }

    /// Total in units of 10⁹, rounded to two decimals, e.g. `1.21 G`.
    pub fn giga(&self) -> String {
        format!("{:.2} G", self.total() as f64 / 1e9)
    }
}

/// Closed-form FLOPs of one forward pass.
pub fn count_flops(arch: &ArchSpec) -> Result<FlopReport> {
    arch.validate()?;
    let u = |x: usize| x as u64;
    let (n, d, h, f) = (u(arch.n), u(arch.d), u(arch.h), u(arch.ffn));
    let dk = d / h;
    let cfg = arch.attn();
    let (w, r, l) = (u(cfg.w), u(cfg.r), u(cfg.l));

    let mut head = Components {
        qkv: 3 * n * d * dk,
        ..Components::default()
    };
    let mut ln_elements = 0;
    match (arch.mode, arch.variant) {
        (_, Variant::Full) => {
            head.scores = n * n * dk;
            head.values = n * n * dk;
        }
        (Mode::Bidirectional, _) => {
            // Every query block sees 2w window slots (padding included) and all r projected rows.
            head.scores = n * 2 * w * dk;
            head.values = head.scores;
            head.projection = n * d * r + 2 * r * n * dk;
            head.projected_scores = n * r * dk;
            head.projected_values = head.projected_scores;
            if cfg.dual_ln {
                ln_elements += if w > 0 { 2 * n * dk } else { 0 } + 2 * r * dk;
            }
        }
        (Mode::Causal, _) => {
            let segments = if r > 0 {
                u(visible_segment_count(arch.n, arch.l))
            } else {
                0
            };
            head.scores = n * 2 * w * dk;
            head.values = head.scores;
            head.projection = segments * l * d * r + 2 * segments * r * l * dk;
            // Each query block sees the segments completed before its last query.
            let mut projected_rows = 0;
            for start in (0..arch.n).step_by(cfg.w) {
                let end = (start + cfg.w).min(arch.n);
                let seen = u((end - 1) / arch.l).min(segments);
                projected_rows += u(end - start) * seen * r;
            }
            head.projected_scores = projected_rows * dk;
            head.projected_values = head.projected_scores;
            if cfg.dual_ln {
                ln_elements += 2 * n * dk + 2 * segments * r * dk;
            }
        }
    }

    let per_layer = Components {
        qkv: h * head.qkv,
        scores: h * head.scores,
        values: h * head.values,
        projection: h * head.projection,
        projected_scores: h * head.projected_scores,
        projected_values: h * head.projected_values,
        output: n * d * d,
        ffn: 2 * n * d * f,
        layer_norm: LN_FLOPS_PER_ELEMENT * (2 * n * d + h * ln_elements),
    };
    Ok(FlopReport {
        per_layer,
        layers: u(arch.layers),
        docs: u(arch.docs),
    })
}

pub fn flops_of(counts: OpCounts) -> u64 {
    counts.macs + LN_FLOPS_PER_ELEMENT * counts.norm_elements
}

/// Randomly initialized blocks and one input sequence for `arch`.
pub fn random_instance(
    arch: &ArchSpec,
    seed: u64,
) -> Result<(Vec<BlockParams>, lsattn_core::Tensor)> {
    arch.validate()?;
    let cfg = arch.attn();
    let mut rng = Rng::new(seed);
    let blocks = (0..arch.layers)
        .map(|_| BlockParams::init(&mut rng, &cfg, arch.ffn, InitScheme::default()))
        .collect();
    let x = rng.normal_matrix(arch.n, arch.d);
    Ok((blocks, x))
}

/// One forward pass over every document.
pub fn forward(arch: &ArchSpec, blocks: &[BlockParams], x: &lsattn_core::Tensor) -> Result<()> {
    let cfg = arch.attn();
    for _ in 0..arch.docs {
        encoder_forward(&Eager, x, blocks, &cfg, arch.variant)?;
    }
    Ok(())
}

/// FLOPs observed by the runtime counters on a real forward pass.
pub fn measure_flops(arch: &ArchSpec, seed: u64) -> Result<u64> {
    let (blocks, x) = random_instance(arch, seed)?;
    let (out, counts) = counters::count(|| forward(arch, &blocks, &x));
    out?;
    Ok(flops_of(counts))
}
