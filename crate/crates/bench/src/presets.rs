//! Architecture presets: built-in names or `key = value` text files.
//!
//! ```text
//! # ListOps-sized encoder
//! layers = 2
//! d = 64
//! n = 2048
//! variant = long-short
//! ```

use std::path::Path;

use lsattn_core::{Mode, Variant};

use crate::error::{BenchError, BenchResult};
use crate::flops::ArchSpec;

pub const BUILTIN: [&str; 4] = ["lra-listops", "lra-text", "lra-retrieval", "char-lm-desk"];

/// Two-layer, 64-wide encoder shared by the LRA presets; long-short with
/// `w = 8`, `r = 32`, DualLN.
fn lra(n: usize, docs: usize) -> ArchSpec {
    ArchSpec {
        layers: 2,
        d: 64,
        h: 2,
        ffn: 128,
        n,
        w: 8,
        r: 32,
        l: 1,
        mode: Mode::Bidirectional,
        variant: Variant::LongShort,
        dual_ln: true,
        docs,
    }
}

pub fn builtin(name: &str) -> Option<ArchSpec> {
    match name {
        "lra-listops" => Some(lra(2048, 1)),
        "lra-text" => Some(lra(4096, 1)),
        "lra-retrieval" => Some(lra(4096, 2)),
        // The toy language model's decoder stack.
        "char-lm-desk" => Some(ArchSpec {
            layers: 2,
            d: 32,
            h: 2,
            ffn: 64,
            n: 32,
            w: 4,
            r: 1,
            l: 4,
            mode: Mode::Causal,
            variant: Variant::LongShort,
            dual_ln: true,
            docs: 1,
        }),
        _ => None,
    }
}

/// Applies `key = value` lines on top of `base`.
pub fn parse_preset(text: &str, base: ArchSpec) -> BenchResult<ArchSpec> {
    let mut arch = base;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| BenchError::Preset(format!("line {}: {msg}", i + 1));
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
        set(&mut arch, key.trim(), value.trim()).map_err(bad)?;
    }
    Ok(arch)
}

pub fn set(arch: &mut ArchSpec, key: &str, value: &str) -> Result<(), String> {
    let int = || value.parse::<usize>().map_err(|e| format!("{key}: {e}"));
    match key {
        "layers" => arch.layers = int()?,
        "d" => arch.d = int()?,
        "h" => arch.h = int()?,
        "ffn" => arch.ffn = int()?,
        "n" => arch.n = int()?,
        "w" => arch.w = int()?,
        "r" => arch.r = int()?,
        "l" => arch.l = int()?,
        "docs" => arch.docs = int()?,
        "mode" => arch.mode = value.parse().map_err(|e| format!("{e}"))?,
        "variant" => arch.variant = value.parse().map_err(|e| format!("{e}"))?,
        "dual_ln" => arch.dual_ln = value.parse().map_err(|e| format!("{key}: {e}"))?,
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}

/// A built-in name, or a path to a preset file layered over `lra-listops`.
pub fn load(name_or_path: &str) -> BenchResult<ArchSpec> {
    if let Some(arch) = builtin(name_or_path) {
        return Ok(arch);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(BenchError::Preset(format!(
            "`{name_or_path}` is neither a file nor one of {}",
            BUILTIN.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path)?;
    parse_preset(&text, lra(2048, 1))
}
