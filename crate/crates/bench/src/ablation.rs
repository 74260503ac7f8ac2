//! The desk-scale DualLN ablation setup shared by `lsattn ablate` and the
//! acceptance suite.

use lsattn_core::Result;
use lsattn_lm::{dualln_ablation, synthetic_text, AblationReport, ModelConfig};

pub const ABLATION_STEPS: usize = 600;
pub const ABLATION_CORPUS_BYTES: usize = 20_000;

/// Desk model over 32-byte windows, SGD at 0.3, validated every 50 steps.
pub fn ablation_config(seed: u64) -> ModelConfig {
    ModelConfig {
        seed,
        lr: 0.3,
        eval_every: 50,
        ..ModelConfig::desk(32)
    }
}

/// Each seed gets its own synthetic corpus as well as its own init.
pub fn ablation_corpus(seed: u64) -> Vec<u8> {
    synthetic_text(ABLATION_CORPUS_BYTES, 100 + seed)
}

pub fn run_seed(seed: u64, steps: usize) -> Result<AblationReport> {
    dualln_ablation(&ablation_config(seed), &ablation_corpus(seed), steps)
}
