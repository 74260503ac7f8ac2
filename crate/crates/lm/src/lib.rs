//! Byte-level autoregressive language model on causal long-short attention.
//!
//! A small Pre-LN decoder trained with plain SGD. It exists to exercise the
//! causal attention stack end to end and to run the DualLN ablation at toy
//! scale.

pub mod config;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod train;

pub use config::{ModelConfig, VOCAB};
pub use corpus::synthetic_text;
pub use metrics::{sig6, write_ablation_csv, write_train_csv};
pub use model::{build_model, forward_logits, window_loss, ModelParams};
pub use train::{
    bpc_from_logits, dualln_ablation, evaluate_bpc, train, AblationReport, Batch, StepMetrics,
    TrainReport,
};
