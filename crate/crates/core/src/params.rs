//! Learned parameters of attention heads and encoder blocks.
//!
//! Every container is generic over its leaf type so the same structure can
//! hold plain tensors or tape variables (see [`HeadParams::map`]).

use crate::config::LsConfig;
use crate::rng::{init_matrix, InitScheme, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LnParams<T = Tensor> {
    pub gain: T,
    pub bias: T,
}

impl LnParams<Tensor> {
    /// Unit gain, zero bias.
    pub fn identity(width: usize) -> Self {
        LnParams {
            gain: Tensor::filled([1, width], 1.0),
            bias: Tensor::zeros([1, width]),
        }
    }
}

impl<T> LnParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> LnParams<U> {
        LnParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }
}

/// One attention head: query/key/value projections (`d×d_k`), the dynamic
/// projection weights (`d×r`) and the local and global layer norms.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T = Tensor> {
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wp: T,
    pub ln_local: LnParams<T>,
    pub ln_global: LnParams<T>,
}

impl HeadParams<Tensor> {
    pub fn init(rng: &mut Rng, cfg: &LsConfig, scheme: InitScheme) -> Self {
        let (d, dk) = (cfg.d, cfg.head_dim());
        HeadParams {
            wq: init_matrix(rng, d, dk, scheme),
            wk: init_matrix(rng, d, dk, scheme),
            wv: init_matrix(rng, d, dk, scheme),
            wp: init_matrix(rng, d, cfg.r, scheme),
            ln_local: LnParams::identity(dk),
            ln_global: LnParams::identity(dk),
        }
    }

    /// Rebuilds from the order produced by [`HeadParams::leaves`].
    pub fn from_leaves(leaves: &[Tensor]) -> Self {
        Self::from_iter(leaves.iter().cloned())
    }
}

impl<T> HeadParams<T> {
    pub const LEAF_COUNT: usize = 8;

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> HeadParams<U> {
        HeadParams {
            wq: f(&self.wq),
            wk: f(&self.wk),
            wv: f(&self.wv),
            wp: f(&self.wp),
            ln_local: self.ln_local.map(&mut f),
            ln_global: self.ln_global.map(&mut f),
        }
    }

    /// `wq, wk, wv, wp, ln_local.gain, ln_local.bias, ln_global.gain, ln_global.bias`
    pub fn leaves(&self) -> Vec<&T> {
        vec![
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wp,
            &self.ln_local.gain,
            &self.ln_local.bias,
            &self.ln_global.gain,
            &self.ln_global.bias,
        ]
    }

    pub fn from_iter(mut it: impl Iterator<Item = T>) -> Self {
        let mut next = || it.next().expect("not enough head parameter leaves");
        HeadParams {
            wq: next(),
            wk: next(),
            wv: next(),
            wp: next(),
            ln_local: LnParams {
                gain: next(),
                bias: next(),
            },
            ln_global: LnParams {
                gain: next(),
                bias: next(),
            },
        }
    }
}

/// `h` heads plus the output projection `W^O` (`d×d`).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadParams<T = Tensor> {
    pub heads: Vec<HeadParams<T>>,
    pub wo: T,
}

impl MultiHeadParams<Tensor> {
    pub fn init(rng: &mut Rng, cfg: &LsConfig, scheme: InitScheme) -> Self {
        let heads = (0..cfg.h)
            .map(|_| HeadParams::init(rng, cfg, scheme))
            .collect();
        MultiHeadParams {
            heads,
            wo: init_matrix(rng, cfg.d, cfg.d, scheme),
        }
    }
}

impl<T> MultiHeadParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> MultiHeadParams<U> {
        MultiHeadParams {
            heads: self.heads.iter().map(|h| h.map(&mut f)).collect(),
            wo: f(&self.wo),
        }
    }

    pub fn leaves(&self) -> Vec<&T> {
        let mut v: Vec<&T> = self.heads.iter().flat_map(HeadParams::leaves).collect();
        v.push(&self.wo);
        v
    }

    pub fn from_iter(heads: usize, mut it: impl Iterator<Item = T>) -> Self {
        let heads = (0..heads).map(|_| HeadParams::from_iter(&mut it)).collect();
        MultiHeadParams {
            heads,
            wo: it.next().expect("missing output projection"),
        }
    }
}

/// Pre-LN transformer block: `x + MHA(LN₁(x))`, then `x + FFN(LN₂(x))` with a
/// ReLU feed-forward of width `ffn`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T = Tensor> {
    pub ln_attn: LnParams<T>,
    pub attn: MultiHeadParams<T>,
    pub ln_ffn: LnParams<T>,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

impl BlockParams<Tensor> {
    pub fn init(rng: &mut Rng, cfg: &LsConfig, ffn: usize, scheme: InitScheme) -> Self {
        let d = cfg.d;
        BlockParams {
            ln_attn: LnParams::identity(d),
            attn: MultiHeadParams::init(rng, cfg, scheme),
            ln_ffn: LnParams::identity(d),
            w1: init_matrix(rng, d, ffn, scheme),
            b1: Tensor::zeros([1, ffn]),
            w2: init_matrix(rng, ffn, d, scheme),
            b2: Tensor::zeros([1, d]),
        }
    }
}

impl<T> BlockParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> BlockParams<U> {
        BlockParams {
            ln_attn: self.ln_attn.map(&mut f),
            attn: self.attn.map(&mut f),
            ln_ffn: self.ln_ffn.map(&mut f),
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }

    pub fn leaves(&self) -> Vec<&T> {
        let mut v = vec![&self.ln_attn.gain, &self.ln_attn.bias];
        v.extend(self.attn.leaves());
        v.extend([
            &self.ln_ffn.gain,
            &self.ln_ffn.bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]);
        v
    }

    pub fn from_iter(heads: usize, mut it: impl Iterator<Item = T>) -> Self {
        let ln_attn = LnParams {
            gain: it.next().expect("leaf"),
            bias: it.next().expect("leaf"),
        };
        let attn = MultiHeadParams::from_iter(heads, &mut it);
        let mut next = || it.next().expect("not enough block parameter leaves");
        BlockParams {
            ln_attn,
            attn,
            ln_ffn: LnParams {
                gain: next(),
                bias: next(),
            },
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        }
    }
}
