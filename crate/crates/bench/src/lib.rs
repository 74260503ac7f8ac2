//! FLOP accounting, scaling sweeps and norm probes for long-short attention,
//! plus the `lsattn` command-line front end.

pub mod ablation;
pub mod alloc;
pub mod check;
pub mod cli;
mod error;
pub mod flops;
pub mod norms;
pub mod presets;
pub mod sweep;

pub use cli::cli_main;
pub use error::{BenchError, BenchResult};
pub use flops::{count_flops, measure_flops, ArchSpec, Components, FlopReport};
pub use sweep::{run_scaling, run_scaling_isolated, SweepRow, SweepSpec};
