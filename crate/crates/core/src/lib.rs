//! Long-short attention in `f64`.
//!
//! A query attends the union of a segment-wise sliding window (short-term
//! context) and a dynamic low-rank projection of the whole sequence
//! (long-range context) in a single softmax. Optionally the two sets of
//! keys/values are layer-normalized separately (DualLN) so their scales match.
//!
//! All model code is written against [`Ops`], which is implemented both for
//! eager tensor evaluation ([`Eager`]) and for the reverse-mode [`Tape`].

pub mod attention;
pub mod autodiff;
pub mod config;
pub mod counters;
pub mod encoder;
mod error;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;

pub use autodiff::{
    finite_diff_check, finite_diff_check_with, GradCheckReport, Gradients, Tape, Var,
};
pub use config::{LsConfig, Mode, Variant};
pub use error::{Error, Result};
pub use ops::{Eager, Ops, Recording};
pub use params::{BlockParams, HeadParams, LnParams, MultiHeadParams};
pub use rng::{init_matrix, InitScheme, Rng};
pub use tensor::{Mask, Tensor, LN_EPS};
