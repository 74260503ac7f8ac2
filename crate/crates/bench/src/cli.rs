use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lsattn_core::{Error, Mode, Variant};
use lsattn_lm::{synthetic_text, train, write_ablation_csv, write_train_csv, ModelConfig};

use crate::ablation::{self, ABLATION_STEPS};
use crate::alloc::{self, LIMIT_FLOOR};
use crate::check::run_checks;
use crate::error::{BenchError, BenchResult};
use crate::flops::{count_flops, ArchSpec};
use crate::norms::{run_norm_probe, write_norms_csv, NormSpec, MIN_SEEDS};
use crate::presets;
use crate::sweep::{
    run_cell, run_scaling, run_scaling_isolated, write_sweep_csv, SweepSpec, MIN_REPS,
};

#[derive(Parser, Debug)]
#[command(
    name = "lsattn",
    about = "Long-short attention: FLOP accounting, sweeps, probes and a toy LM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form FLOPs of an encoder, by component.
    Flops {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Median wall time and peak allocation over a doubling ladder of lengths.
    Sweep {
        #[command(flatten)]
        arch: ArchArgs,
        /// Comma-separated sequence lengths, each twice the previous.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        /// Comma-separated variants.
        #[arg(long, value_delimiter = ',', default_value = "long-short")]
        variant: Vec<Variant>,
        #[arg(long, default_value_t = MIN_REPS)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Refuse large allocations beyond this many live bytes; each cell
        /// then runs in its own process and failures become OOM rows.
        #[arg(long)]
        mem_limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One sweep cell, printed as a bare CSV row.
    #[command(hide = true)]
    Cell {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value_t = MIN_REPS)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        mem_limit: Option<usize>,
    },
    /// Local/global key and value norm ratios at initialization.
    Norms {
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        h: usize,
        #[arg(long, default_value_t = 8)]
        w: usize,
        #[arg(long, default_value_t = 8)]
        r: usize,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        /// Number of seeds, counting up from --seed.
        #[arg(long, default_value_t = MIN_SEEDS)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// One-hot projection weights (requires r = n).
        #[arg(long)]
        one_hot: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy byte-level language model.
    Train {
        #[command(flatten)]
        lm: LmArgs,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        eval_every: usize,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long)]
        no_dual_ln: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired training runs with and without DualLN.
    Ablate {
        #[command(flatten)]
        lm: LmArgs,
        #[arg(long, default_value_t = ABLATION_STEPS)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite; exits 1 if anything fails.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Architecture overrides applied on top of a preset.
#[derive(Args, Debug, Default)]
struct ArchArgs {
    /// Built-in preset name or path to a `key = value` file.
    #[arg(long, default_value = "lra-listops")]
    preset: String,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    ffn: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    dual_ln: Option<bool>,
}

impl ArchArgs {
    fn resolve(&self) -> BenchResult<ArchSpec> {
        let mut a = presets::load(&self.preset)?;
        a.mode = self.mode.unwrap_or(a.mode);
        a.layers = self.layers.unwrap_or(a.layers);
        a.d = self.d.unwrap_or(a.d);
        a.h = self.h.unwrap_or(a.h);
        a.ffn = self.ffn.unwrap_or(a.ffn);
        a.w = self.w.unwrap_or(a.w);
        a.r = self.r.unwrap_or(a.r);
        a.l = self.l.unwrap_or(a.l);
        a.docs = self.docs.unwrap_or(a.docs);
        a.dual_ln = self.dual_ln.unwrap_or(a.dual_ln);
        Ok(a)
    }
}

#[derive(Args, Debug)]
struct LmArgs {
    /// Training text; defaults to a synthetic English-like corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Size of the synthetic corpus in bytes.
    #[arg(long, default_value_t = ablation::ABLATION_CORPUS_BYTES)]
    synthetic_bytes: usize,
    /// Context length in bytes.
    #[arg(long, default_value_t = 32)]
    seq: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl LmArgs {
    fn corpus(&self) -> BenchResult<Vec<u8>> {
        match &self.corpus {
            Some(path) => Ok(std::fs::read(path)?),
            None => Ok(synthetic_text(self.synthetic_bytes, 100 + self.seed)),
        }
    }
}

fn output(path: &Option<PathBuf>) -> BenchResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn check_mem_limit(limit: Option<usize>) -> BenchResult<()> {
    match limit {
        Some(b) if b < LIMIT_FLOOR => Err(BenchError::Usage(format!(
            "--mem-limit {b} is below the {LIMIT_FLOOR}-byte floor"
        ))),
        _ => Ok(()),
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status: 0 on success, 1 when an invariant fails, 2 on usage
/// errors and invalid configurations.
pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lsattn: {e}");
            match e {
                BenchError::Usage(_)
                | BenchError::Preset(_)
                | BenchError::Core(Error::Config(_)) => 2,
                _ => 1,
            }
        }
    }
}

fn run(command: Command) -> BenchResult<()> {
    match command {
        Command::Flops {
            arch,
            variant,
            n,
            out,
        } => {
            let mut a = arch.resolve()?;
            a.variant = variant.unwrap_or(a.variant);
            a.n = n.unwrap_or(a.n);
            let report = count_flops(&a)?;
            let mut w = output(&out)?;
            writeln!(w, "component,per_layer,total")?;
            let scale = report.layers * report.docs;
            for (name, v) in report.per_layer.named() {
                writeln!(w, "{name},{v},{}", v * scale)?;
            }
            writeln!(w, "total,{},{}", report.per_layer.sum(), report.total())?;
            w.flush()?;
            eprintln!("{a}: {} FLOPs ({})", report.total(), report.giga());
        }
        Command::Sweep {
            arch,
            n,
            variant,
            reps,
            seed,
            mem_limit,
            out,
        } => {
            check_mem_limit(mem_limit)?;
            let spec = SweepSpec {
                base: arch.resolve()?,
                ns: n,
                variants: variant,
                reps,
                seed,
            };
            let rows = match mem_limit {
                Some(limit) => run_scaling_isolated(&spec, &std::env::current_exe()?, Some(limit))?,
                None => run_scaling(&spec)?,
            };
            let mut w = output(&out)?;
            write_sweep_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::Cell {
            arch,
            n,
            variant,
            reps,
            seed,
            mem_limit,
        } => {
            check_mem_limit(mem_limit)?;
            let a = ArchSpec {
                n,
                variant,
                ..arch.resolve()?
            };
            alloc::set_limit(mem_limit);
            let row = run_cell(&a, reps, seed);
            alloc::set_limit(None);
            println!("{}", row?.to_csv());
        }
        Command::Norms {
            n,
            d,
            h,
            w,
            r,
            layers,
            seeds,
            seed,
            one_hot,
            out,
        } => {
            let spec = NormSpec {
                n,
                d,
                h,
                w,
                r,
                layers,
                seeds: (seed..seed + seeds as u64).collect(),
                one_hot,
            };
            let report = run_norm_probe(&spec)?;
            let mut o = output(&out)?;
            write_norms_csv(&report, &mut o)?;
            o.flush()?;
            eprintln!(
                "mean key ratio: {:.4} without DualLN, {:.4} with",
                report.mean_key_ratio(false),
                report.mean_key_ratio(true)
            );
        }
        Command::Train {
            lm,
            steps,
            lr,
            eval_every,
            dropout,
            no_dual_ln,
            out,
        } => {
            let cfg = ModelConfig {
                steps,
                lr,
                eval_every,
                dropout,
                seed: lm.seed,
                ..ModelConfig::desk(lm.seq)
            }
            .with_dual_ln(!no_dual_ln);
            let (_, report) = train(&cfg, &lm.corpus()?)?;
            let mut o = output(&out)?;
            write_train_csv(&report, &mut o)?;
            o.flush()?;
            eprintln!("final validation BPC {:.4}", report.final_val_bpc());
        }
        Command::Ablate { lm, steps, out } => {
            let cfg = ModelConfig {
                attn: ablation::ablation_config(lm.seed).attn.with_n(lm.seq),
                ..ablation::ablation_config(lm.seed)
            };
            let report = lsattn_lm::dualln_ablation(&cfg, &lm.corpus()?, steps)?;
            let mut o = output(&out)?;
            write_ablation_csv(&report, &mut o)?;
            o.flush()?;
            eprintln!(
                "final validation BPC: {:.4} with DualLN, {:.4} without",
                report.with_dual_ln.final_val_bpc(),
                report.without_dual_ln.final_val_bpc()
            );
        }
        Command::Check { seed } => {
            let results = run_checks(seed);
            for r in &results {
                println!("{r}");
            }
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.name)
                .collect();
            if !failed.is_empty() {
                return Err(BenchError::Invariant(failed.join(", ")));
            }
        }
    }
    Ok(())
}
