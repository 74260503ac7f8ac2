use lsattn_core::encoder::block_forward;
use lsattn_core::{
    init_matrix, BlockParams, Error, InitScheme, LnParams, Ops, Result, Rng, Tensor, Variant,
};

use crate::config::ModelConfig;

/// Head weights start at this fraction of the fan-in scale, so the untrained
/// model predicts a near-uniform distribution.
const HEAD_INIT_SCALE: f64 = 0.1;
/// Standard deviation of token and position embeddings at init.
const EMBED_STD: f64 = 0.5;

/// Pre-LN decoder: token + learned absolute position embeddings, causal
/// long-short blocks, a final layer norm and an untied output head.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub embed: T,
    pub pos: T,
    pub blocks: Vec<BlockParams<T>>,
    pub ln_final: LnParams<T>,
    pub head_w: T,
    pub head_b: T,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            embed: f(&self.embed),
            pos: f(&self.pos),
            blocks: self.blocks.iter().map(|b| b.map(&mut f)).collect(),
            ln_final: self.ln_final.map(&mut f),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }

    pub fn leaves(&self) -> Vec<&T> {
        let mut v = vec![&self.embed, &self.pos];
        for b in &self.blocks {
            v.extend(b.leaves());
        }
        v.extend([
            &self.ln_final.gain,
            &self.ln_final.bias,
            &self.head_w,
            &self.head_b,
        ]);
        v
    }
}

impl ModelParams<Tensor> {
    pub fn parameter_count(&self) -> usize {
        self.leaves().iter().map(|t| t.len()).sum()
    }

    /// Applies `p ← p − lr·g` leaf by leaf; `grads` follows [`ModelParams::leaves`].
    pub fn sgd_step(&mut self, grads: &[Tensor], lr: f64) -> Result<()> {
        let leaves = self.leaves();
        if grads.len() != leaves.len() {
            return Err(Error::Config(format!(
                "{} gradients for {} parameters",
                grads.len(),
                leaves.len()
            )));
        }
        let updated = leaves
            .iter()
            .zip(grads)
            .map(|(p, g)| p.sub(&g.scale(lr)))
            .collect::<Result<Vec<_>>>()?;
        let mut it = updated.into_iter();
        *self = self.map(|_| it.next().expect("one update per leaf"));
        Ok(())
    }
}

pub fn build_model(cfg: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    cfg.validate()?;
    let scheme = InitScheme::default();
    let (d, v) = (cfg.d, cfg.vocab);
    let embed = rng.normal_matrix(v, d).scale(EMBED_STD);
    let pos = rng.normal_matrix(cfg.seq_len(), d).scale(EMBED_STD);
    let blocks = (0..cfg.layers)
        .map(|_| BlockParams::init(rng, &cfg.attn, cfg.ffn, scheme))
        .collect();
    Ok(ModelParams {
        embed,
        pos,
        blocks,
        ln_final: LnParams::identity(d),
        head_w: init_matrix(rng, d, v, scheme).scale(HEAD_INIT_SCALE),
        head_b: Tensor::zeros([1, v]),
    })
}

/// Next-token logits (`len×vocab`) for a token window of at most `n` tokens.
/// `keep`, when given, is an inverted-dropout mask for the input embeddings.
pub fn forward_logits<O: Ops>(
    ops: &O,
    params: &ModelParams<O::T>,
    cfg: &ModelConfig,
    tokens: &[u8],
    keep: Option<&Tensor>,
) -> Result<O::T> {
    let len = tokens.len();
    if len == 0 || len > cfg.seq_len() {
        return Err(Error::Config(format!(
            "window of {len} tokens; the model takes 1..={}",
            cfg.seq_len()
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab) {
        return Err(Error::Config(format!(
            "token {bad} outside vocab {}",
            cfg.vocab
        )));
    }
    let index: Vec<Option<usize>> = tokens.iter().map(|&t| Some(t as usize)).collect();
    let tok = ops.gather_rows(&params.embed, &index)?;
    let pos = ops.slice_rows(&params.pos, 0, len)?;
    let mut h = ops.add(&tok, &pos)?;
    if let Some(mask) = keep {
        h = ops.mul_const(&h, mask)?;
    }
    let attn = cfg.attn.clone().with_n(len);
    for b in &params.blocks {
        h = block_forward(ops, &h, b, &attn, Variant::LongShort)?;
    }
    let h = ops.layer_norm(
        &h,
        &params.ln_final.gain,
        &params.ln_final.bias,
        attn.ln_eps,
    )?;
    let logits = ops.matmul(&h, &params.head_w)?;
    ops.add_row(&logits, &params.head_b)
}

/// Mean next-token cross-entropy (nats) over a window of `len + 1` tokens.
pub fn window_loss<O: Ops>(
    ops: &O,
    params: &ModelParams<O::T>,
    cfg: &ModelConfig,
    window: &[u8],
    keep: Option<&Tensor>,
) -> Result<O::T> {
    if window.len() < 2 {
        return Err(Error::Config(
            "a loss window needs at least two tokens".into(),
        ));
    }
    let (inputs, targets) = (&window[..window.len() - 1], &window[1..]);
    let logits = forward_logits(ops, params, cfg, inputs, keep)?;
    let targets: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
    ops.cross_entropy(&logits, &targets)
}
