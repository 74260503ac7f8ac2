//! Seeded random numbers and parameter initialization.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// Portable seeded generator. The same seed produces the same stream on every
/// platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a named sub-stream of this seed.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Matrix of independent standard normal entries.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| self.normal())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on `[-√(3/fan_in), √(3/fan_in)]`.
    #[default]
    ScaledUniform,
    /// Normal with standard deviation `1/√fan_in`.
    ScaledNormal,
}

/// Zero-mean matrix with variance `1/rows` (the fan-in of a `rows×cols`
/// weight applied as `x · W`).
pub fn init_matrix(rng: &mut Rng, rows: usize, cols: usize, scheme: InitScheme) -> Tensor {
    let fan_in = rows.max(1) as f64;
    match scheme {
        InitScheme::ScaledUniform => {
            let a = (3.0 / fan_in).sqrt();
            Tensor::from_fn(rows, cols, |_, _| rng.uniform(-a, a))
        }
        InitScheme::ScaledNormal => {
            let s = 1.0 / fan_in.sqrt();
            Tensor::from_fn(rows, cols, |_, _| rng.normal() * s)
        }
    }
}
