use lsattn_core::{Error, LsConfig, Mode, Result};

/// Byte vocabulary.
pub const VOCAB: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub d: usize,
    pub h: usize,
    pub ffn: usize,
    pub vocab: usize,
    /// Causal attention settings; `attn.n` is the training context length.
    pub attn: LsConfig,
    /// Inverted dropout on the input embeddings while training.
    pub dropout: f64,
    pub lr: f64,
    pub steps: usize,
    /// Sequences per step.
    pub batch: usize,
    /// Validate every this many steps (and after the last one).
    pub eval_every: usize,
    /// Number of held-out windows scored at each evaluation.
    pub val_windows: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Two-layer, 32-wide model with the desk-scale causal preset
    /// (`w = 4`, `l = 4`, `r = 1`, DualLN) over `seq`-token windows.
    pub fn desk(seq: usize) -> Self {
        let (d, h) = (32, 2);
        ModelConfig {
            layers: 2,
            d,
            h,
            ffn: 64,
            vocab: VOCAB,
            attn: LsConfig::char_lm_desk_preset(seq, d, h),
            dropout: 0.0,
            lr: 0.5,
            steps: 200,
            batch: 4,
            eval_every: 10,
            val_windows: 4,
            seed: 0,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.attn.n
    }

    pub fn with_dual_ln(mut self, on: bool) -> Self {
        self.attn.dual_ln = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.attn.d != self.d || self.attn.h != self.h {
            return Err(Error::Config(format!(
                "attention config has d={}, h={} but the model has d={}, h={}",
                self.attn.d, self.attn.h, self.d, self.h
            )));
        }
        self.attn.validate()?;
        if self.attn.mode != Mode::Causal {
            return Err(Error::Config(
                "the language model needs causal attention".into(),
            ));
        }
        if self.layers == 0 || self.ffn == 0 || self.attn.n < 2 {
            return Err(Error::Config(
                "layers, ffn width and context length must be positive (n >= 2)".into(),
            ));
        }
        if self.vocab == 0 || self.vocab > VOCAB {
            return Err(Error::Config(format!("vocab must be in 1..={VOCAB}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.batch == 0 || self.eval_every == 0 || self.val_windows == 0 {
            return Err(Error::Config(
                "batch, eval_every and val_windows must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let (d, v, n, f) = (self.d, self.vocab, self.attn.n, self.ffn);
        let dk = d / self.h;
        let head = 3 * d * dk + d * self.attn.r + 4 * dk;
        let block = 4 * d + self.h * head + d * d + d * f + f + f * d + d;
        v * d + n * d + self.layers * block + 2 * d + d * v + v
    }
}
