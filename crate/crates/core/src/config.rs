use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::LN_EPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Bidirectional,
    Causal,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Bidirectional => "bidirectional",
            Mode::Causal => "causal",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional" | "bidir" => Ok(Mode::Bidirectional),
            "causal" => Ok(Mode::Causal),
            _ => Err(Error::config(format!("unknown mode `{s}`"))),
        }
    }
}

/// Which attention mechanism a layer runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Exact softmax attention over every (visible) token.
    Full,
    /// Segment-wise sliding window only (`r = 0`).
    Window,
    /// Dynamic low-rank projection only (`w = 0`).
    Projection,
    /// Joint attention over the window and the projected tokens.
    LongShort,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::Window,
        Variant::Projection,
        Variant::LongShort,
    ];

    /// Restricts `cfg` to the branches this variant uses.
    pub fn restrict(self, cfg: &LsConfig) -> LsConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Window => c.r = 0,
            Variant::Projection => c.w = 0,
            Variant::Full | Variant::LongShort => {}
        }
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Window => "window",
            Variant::Projection => "projection",
            Variant::LongShort => "long-short",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "window" => Ok(Variant::Window),
            "projection" => Ok(Variant::Projection),
            "long-short" | "longshort" | "ls" => Ok(Variant::LongShort),
            _ => Err(Error::config(format!("unknown variant `{s}`"))),
        }
    }
}

/// Hyperparameters of one long-short attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LsConfig {
    /// Sequence length in tokens.
    pub n: usize,
    /// Model width.
    pub d: usize,
    /// Number of heads; `d / h` is the per-head width.
    pub h: usize,
    /// Window segment size. Must be even; `0` disables the local branch.
    pub w: usize,
    /// Projection rank; `0` disables the global branch.
    pub r: usize,
    /// Segment length of the causal projection. Ignored when bidirectional.
    pub l: usize,
    pub mode: Mode,
    pub dual_ln: bool,
    pub ln_eps: f64,
}

impl LsConfig {
    pub fn bidirectional(n: usize, d: usize, h: usize, w: usize, r: usize) -> Self {
        LsConfig {
            n,
            d,
            h,
            w,
            r,
            l: 1,
            mode: Mode::Bidirectional,
            dual_ln: false,
            ln_eps: LN_EPS,
        }
    }

    pub fn causal(n: usize, d: usize, h: usize, w: usize, r: usize, l: usize) -> Self {
        LsConfig {
            l,
            mode: Mode::Causal,
            ..Self::bidirectional(n, d, h, w, r)
        }
    }

    /// Character-level language modelling setting: `w = 512`, `l = 16`, `r = 1`.
    pub fn char_lm_preset(n: usize, d: usize, h: usize) -> Self {
        Self::causal(n, d, h, 512, 1, 16).with_dual_ln(true)
    }

    /// Desk-scale version of [`LsConfig::char_lm_preset`]: `w = 4`, `l = 4`, `r = 1`.
    pub fn char_lm_desk_preset(n: usize, d: usize, h: usize) -> Self {
        Self::causal(n, d, h, 4, 1, 4).with_dual_ln(true)
    }

    pub fn with_dual_ln(mut self, on: bool) -> Self {
        self.dual_ln = on;
        self
    }

    pub fn with_ln_eps(mut self, eps: f64) -> Self {
        self.ln_eps = eps;
        self
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.h
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.d == 0 || !self.d.is_multiple_of(self.h) {
            return Err(Error::config(format!(
                "width d={} must be a positive multiple of the head count h={}",
                self.d, self.h
            )));
        }
        if !self.w.is_multiple_of(2) {
            return Err(Error::config(format!(
                "window size w={} must be even",
                self.w
            )));
        }
        if self.w == 0 && self.r == 0 {
            return Err(Error::config("w and r cannot both be zero"));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::config("layer-norm epsilon must be positive"));
        }
        if self.mode == Mode::Causal {
            if self.l == 0 {
                return Err(Error::config("causal segment length l must be at least 1"));
            }
            if 2 * self.w < self.l {
                return Err(Error::config(format!(
                    "causal mode needs w >= l/2 (w={}, l={})",
                    self.w, self.l
                )));
            }
        }
        Ok(())
    }
}
