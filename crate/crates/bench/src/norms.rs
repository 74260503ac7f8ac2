//! CSV front end for the local/global norm-ratio probe.

use std::io::{self, Write};

use lsattn_core::attention::{norm_ratio_probe, NormProbeConfig, NormProbeReport, ProbeProjection};
use lsattn_core::LsConfig;
use lsattn_lm::sig6;

use crate::error::{BenchError, BenchResult};

pub const MIN_SEEDS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct NormSpec {
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub r: usize,
    pub layers: usize,
    pub seeds: Vec<u64>,
    /// Force one-hot projection weights (needs `r = n`).
    pub one_hot: bool,
}

impl Default for NormSpec {
    fn default() -> Self {
        NormSpec {
            n: 256,
            d: 64,
            h: 2,
            w: 8,
            r: 8,
            layers: 2,
            seeds: (1..=MIN_SEEDS as u64).collect(),
            one_hot: false,
        }
    }
}

pub fn run_norm_probe(spec: &NormSpec) -> BenchResult<NormProbeReport> {
    if spec.seeds.len() < MIN_SEEDS {
        return Err(BenchError::Usage(format!(
            "the norm probe averages over at least {MIN_SEEDS} seeds, got {}",
            spec.seeds.len()
        )));
    }
    let mut cfg = NormProbeConfig::new(
        LsConfig::bidirectional(spec.n, spec.d, spec.h, spec.w, spec.r),
        spec.layers,
    );
    if spec.one_hot {
        cfg.projection = ProbeProjection::OneHot;
    }
    Ok(norm_ratio_probe(&cfg, &spec.seeds)?)
}

/// `layer,seed,key_ratio,value_ratio,dual_ln`, one row per sample.
pub fn write_norms_csv<W: Write>(report: &NormProbeReport, mut out: W) -> io::Result<()> {
    writeln!(out, "layer,seed,key_ratio,value_ratio,dual_ln")?;
    for s in &report.samples {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.layer,
            s.seed,
            sig6(s.key_ratio),
            sig6(s.value_ratio),
            s.dual_ln
        )?;
    }
    Ok(())
}
