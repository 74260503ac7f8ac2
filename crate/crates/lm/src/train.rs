use std::f64::consts::LN_2;
use std::time::Instant;

use lsattn_core::{Eager, Error, Ops, Result, Rng, Tape, Tensor};

use crate::config::ModelConfig;
use crate::model::{build_model, window_loss, ModelParams};

/// `batch` windows of `seq + 1` byte tokens: inputs are the first `seq`
/// tokens of each row, targets the last `seq`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<Vec<u8>>,
}

impl Batch {
    /// Uniformly placed windows of `seq + 1` tokens.
    pub fn sample(corpus: &[u8], seq: usize, batch: usize, rng: &mut Rng) -> Result<Batch> {
        if corpus.len() < seq + 1 {
            return Err(Error::Config(format!(
                "corpus of {} bytes is shorter than one {}-token window",
                corpus.len(),
                seq + 1
            )));
        }
        let starts = corpus.len() - seq;
        let tokens = (0..batch)
            .map(|_| {
                let s = rng.below(starts);
                corpus[s..s + seq + 1].to_vec()
            })
            .collect();
        Ok(Batch { tokens })
    }

    pub fn inputs(&self) -> impl Iterator<Item = &[u8]> {
        self.tokens.iter().map(|t| &t[..t.len() - 1])
    }

    pub fn targets(&self) -> impl Iterator<Item = &[u8]> {
        self.tokens.iter().map(|t| &t[1..])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub train_loss_nats: f64,
    /// Held-out BPC, present on evaluation steps.
    pub val_bpc: Option<f64>,
    pub wall_ms: f64,
}

impl StepMetrics {
    pub fn train_bpc(&self) -> f64 {
        self.train_loss_nats / LN_2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// BPC of the untrained model on the validation windows.
    pub initial_val_bpc: f64,
    pub steps: Vec<StepMetrics>,
}

impl TrainReport {
    pub fn final_val_bpc(&self) -> f64 {
        self.steps
            .iter()
            .rev()
            .find_map(|s| s.val_bpc)
            .unwrap_or(self.initial_val_bpc)
    }

    /// Every recorded `(step, val_bpc)`, starting with the untrained model at step 0.
    pub fn val_curve(&self) -> Vec<(usize, f64)> {
        std::iter::once((0, self.initial_val_bpc))
            .chain(
                self.steps
                    .iter()
                    .filter_map(|s| s.val_bpc.map(|v| (s.step, v))),
            )
            .collect()
    }
}

/// Cross-entropy of row-wise logits in bits per token.
pub fn bpc_from_logits(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let nats = Eager.cross_entropy(logits, targets)?;
    Ok(nats.data()[0] / LN_2)
}

/// Mean next-token cross-entropy over `slice`, in bits per byte. The slice is
/// cut into windows of up to `n + 1` tokens that overlap by one, so every byte
/// after the first is predicted exactly once.
pub fn evaluate_bpc(params: &ModelParams, cfg: &ModelConfig, slice: &[u8]) -> Result<f64> {
    let n = cfg.seq_len();
    if slice.len() < n {
        return Err(Error::Config(format!(
            "evaluation slice of {} bytes is shorter than the context length {n}",
            slice.len()
        )));
    }
    let (mut total, mut count) = (0.0, 0usize);
    let mut start = 0;
    while start + 1 < slice.len() {
        let end = (start + n + 1).min(slice.len());
        let window = &slice[start..end];
        let loss = window_loss(&Eager, params, cfg, window, None)?;
        total += loss.data()[0] * (window.len() - 1) as f64;
        count += window.len() - 1;
        start = end - 1;
    }
    Ok(total / count as f64 / LN_2)
}

/// Splits off the held-out tail: a tenth of the corpus, but at least the
/// requested number of validation windows.
fn split(corpus: &[u8], cfg: &ModelConfig) -> (usize, usize) {
    let n = cfg.seq_len();
    let want = (corpus.len() / 10).max(cfg.val_windows * n + 1);
    let val = want.min(corpus.len() / 2);
    (corpus.len() - val, val)
}

fn validation_slice<'a>(corpus: &'a [u8], cfg: &ModelConfig) -> &'a [u8] {
    let (train_len, _) = split(corpus, cfg);
    let tail = &corpus[train_len..];
    &tail[..tail.len().min(cfg.val_windows * cfg.seq_len() + 1)]
}

/// Plain SGD with a fixed step size on randomly placed training windows.
/// Deterministic given `(cfg, corpus)` apart from `wall_ms`.
pub fn train(cfg: &ModelConfig, corpus: &[u8]) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    let n = cfg.seq_len();
    if corpus.len() < 10 * n {
        return Err(Error::Config(format!(
            "corpus of {} bytes; training needs at least {} (10x the context length)",
            corpus.len(),
            10 * n
        )));
    }
    let root = Rng::new(cfg.seed);
    let mut params = build_model(cfg, &mut root.fork(0))?;
    let mut data_rng = root.fork(1);
    let mut dropout_rng = root.fork(2);
    let (train_len, _) = split(corpus, cfg);
    let train_data = &corpus[..train_len];
    let val = validation_slice(corpus, cfg);

    let initial_val_bpc = evaluate_bpc(&params, cfg, val)?;
    let mut steps = Vec::with_capacity(cfg.steps);
    let clock = Instant::now();
    for step in 1..=cfg.steps {
        let batch = Batch::sample(train_data, n, cfg.batch, &mut data_rng)?;
        let tape = Tape::new();
        let vars = params.map(|t| tape.leaf(t.clone()));
        let mut losses = Vec::with_capacity(cfg.batch);
        for window in &batch.tokens {
            let keep = (cfg.dropout > 0.0).then(|| {
                let scale = 1.0 / (1.0 - cfg.dropout);
                Tensor::from_fn(n, cfg.d, |_, _| {
                    if dropout_rng.uniform(0.0, 1.0) < cfg.dropout {
                        0.0
                    } else {
                        scale
                    }
                })
            });
            losses.push(window_loss(&tape, &vars, cfg, window, keep.as_ref())?);
        }
        let refs: Vec<&_> = losses.iter().collect();
        let stacked = tape.concat_rows(&refs)?;
        let loss = tape.scale(&tape.sum_all(&stacked)?, 1.0 / cfg.batch as f64)?;
        let loss_value = tape.get(loss).data()[0];
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {loss_value} at step {step}"
            )));
        }
        let grads = tape.backward(loss, &Tensor::scalar(1.0))?;
        let g: Vec<Tensor> = vars
            .leaves()
            .into_iter()
            .map(|v| grads.wrt(*v).clone())
            .collect();
        params.sgd_step(&g, cfg.lr)?;

        let val_bpc = if step % cfg.eval_every == 0 || step == cfg.steps {
            let v = evaluate_bpc(&params, cfg, val)?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "validation BPC {v} at step {step}"
                )));
            }
            Some(v)
        } else {
            None
        };
        steps.push(StepMetrics {
            step,
            train_loss_nats: loss_value,
            val_bpc,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok((
        params,
        TrainReport {
            initial_val_bpc,
            steps,
        },
    ))
}

/// Two runs that differ only in the DualLN flag.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub with_dual_ln: TrainReport,
    pub without_dual_ln: TrainReport,
}

impl AblationReport {
    /// Paired `(step, with, without)` validation BPC.
    pub fn paired_val(&self) -> Vec<(usize, f64, f64)> {
        self.with_dual_ln
            .val_curve()
            .into_iter()
            .zip(self.without_dual_ln.val_curve())
            .map(|((s, a), (_, b))| (s, a, b))
            .collect()
    }

    pub fn dual_ln_wins(&self) -> bool {
        self.with_dual_ln.final_val_bpc() <= self.without_dual_ln.final_val_bpc()
    }
}

pub fn dualln_ablation(cfg: &ModelConfig, corpus: &[u8], steps: usize) -> Result<AblationReport> {
    let base = ModelConfig {
        steps,
        ..cfg.clone()
    };
    let (_, with_dual_ln) = train(&base.clone().with_dual_ln(true), corpus)?;
    let (_, without_dual_ln) = train(&base.with_dual_ln(false), corpus)?;
    Ok(AblationReport {
        with_dual_ln,
        without_dual_ln,
    })
}
