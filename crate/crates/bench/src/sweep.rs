//! Wall-time and peak-allocation sweeps over sequence length.

use std::io::{self, Write};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lsattn_core::{counters, BlockParams, Error, Mode, Tensor, Variant};
use lsattn_lm::sig6;

use crate::alloc;
use crate::error::{BenchError, BenchResult};
use crate::flops::{count_flops, flops_of, forward, random_instance, ArchSpec};

pub const MIN_REPS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    /// Everything but `n` and `variant`, which the sweep varies.
    pub base: ArchSpec,
    pub ns: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Timed repetitions per cell, after one untimed warmup.
    pub reps: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> BenchResult<()> {
        if self.ns.is_empty() || self.variants.is_empty() {
            return Err(BenchError::Usage(
                "a sweep needs at least one n and one variant".into(),
            ));
        }
        if self.ns.windows(2).any(|p| p[1] != 2 * p[0]) {
            return Err(BenchError::Usage(format!(
                "n values must double at each step, got {:?}",
                self.ns
            )));
        }
        if self.reps < MIN_REPS {
            return Err(BenchError::Usage(format!(
                "at least {MIN_REPS} timed repetitions, got {}",
                self.reps
            )));
        }
        for arch in self.cells() {
            arch.validate()?;
        }
        Ok(())
    }

    /// Cells in output order: grouped by variant, `n` increasing.
    pub fn cells(&self) -> Vec<ArchSpec> {
        self.variants
            .iter()
            .flat_map(|&variant| {
                self.ns.iter().map(move |&n| ArchSpec {
                    n,
                    variant,
                    ..self.base.clone()
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub w: usize,
    pub r: usize,
    pub mode: Mode,
    pub variant: Variant,
    pub flops: u64,
    /// Median over the timed repetitions; `None` when the cell ran out of memory.
    pub wall_ms: Option<f64>,
    /// Largest growth of live heap bytes during a repetition; `None` when the
    /// tracking allocator is not installed or the cell ran out of memory.
    pub peak_bytes: Option<u64>,
    pub oom: bool,
}

pub const CSV_HEADER: &str = "n,w,r,mode,variant,flops,wall_ms,peak_bytes,status";

impl SweepRow {
    fn new(arch: &ArchSpec, flops: u64) -> Self {
        let cfg = arch.attn();
        SweepRow {
            n: arch.n,
            w: cfg.w,
            r: cfg.r,
            mode: arch.mode,
            variant: arch.variant,
            flops,
            wall_ms: None,
            peak_bytes: None,
            oom: false,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.n,
            self.w,
            self.r,
            self.mode,
            self.variant,
            self.flops,
            self.wall_ms.map(sig6).unwrap_or_default(),
            self.peak_bytes.map(|b| b.to_string()).unwrap_or_default(),
            if self.oom { "oom" } else { "ok" }
        )
    }

    pub fn from_csv(line: &str) -> BenchResult<Self> {
        let bad = || BenchError::Invariant(format!("malformed sweep row `{line}`"));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return Err(bad());
        }
        Ok(SweepRow {
            n: f[0].parse().map_err(|_| bad())?,
            w: f[1].parse().map_err(|_| bad())?,
            r: f[2].parse().map_err(|_| bad())?,
            mode: f[3].parse()?,
            variant: f[4].parse()?,
            flops: f[5].parse().map_err(|_| bad())?,
            wall_ms: nonempty(f[6])
                .map(str::parse)
                .transpose()
                .map_err(|_| bad())?,
            peak_bytes: nonempty(f[7])
                .map(str::parse)
                .transpose()
                .map_err(|_| bad())?,
            oom: match f[8] {
                "ok" => false,
                "oom" => true,
                _ => return Err(bad()),
            },
        })
    }
}

fn nonempty(s: &str) -> Option<&str> {
    (!s.is_empty()).then_some(s)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}

/// Timing is only meaningful single-threaded; `LSATTN_THREADS`, if set, must be 1.
pub fn check_threads() -> BenchResult<()> {
    match std::env::var("LSATTN_THREADS") {
        Ok(v) if v.trim() != "1" => Err(BenchError::Usage(format!(
            "LSATTN_THREADS={v}: timed runs are single-threaded, set it to 1 or unset it"
        ))),
        _ => Ok(()),
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// One cell being timed: its instance, the times so far and the peak.
struct Cell {
    arch: ArchSpec,
    instance: Option<(Vec<BlockParams>, Tensor)>,
    row: SweepRow,
    times: Vec<f64>,
    peak: usize,
}

impl Cell {
    /// Builds the instance and runs the untimed warmup, which also checks the
    /// closed-form FLOPs against the counters.
    fn prepare(arch: &ArchSpec, seed: u64) -> BenchResult<Cell> {
        let flops = count_flops(arch)?.total();
        let mut cell = Cell {
            arch: arch.clone(),
            instance: None,
            row: SweepRow::new(arch, flops),
            times: Vec::new(),
            peak: 0,
        };
        let warm = random_instance(arch, seed).and_then(|(blocks, x)| {
            let (out, counts) = counters::count(|| forward(arch, &blocks, &x));
            out.map(|()| (blocks, x, counts))
        });
        match warm {
            Ok((blocks, x, counts)) => {
                if flops_of(counts) != flops {
                    return Err(BenchError::Invariant(format!(
                        "{arch}: closed form says {flops} FLOPs, the counters saw {}",
                        flops_of(counts)
                    )));
                }
                cell.instance = Some((blocks, x));
            }
            Err(Error::Alloc { .. }) => cell.row.oom = true,
            Err(e) => return Err(e.into()),
        }
        Ok(cell)
    }

    fn time_once(&mut self) -> BenchResult<()> {
        let Some((blocks, x)) = &self.instance else {
            return Ok(());
        };
        let base = alloc::reset_peak();
        let t = Instant::now();
        match forward(&self.arch, blocks, x) {
            Ok(()) => {
                self.times.push(t.elapsed().as_secs_f64() * 1e3);
                self.peak = self.peak.max(alloc::peak_bytes().saturating_sub(base));
            }
            Err(Error::Alloc { .. }) => {
                self.instance = None;
                self.row.oom = true;
            }
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    fn finish(mut self) -> SweepRow {
        if !self.row.oom {
            self.row.wall_ms = Some(median(self.times));
            self.row.peak_bytes = alloc::is_active().then_some(self.peak as u64);
        }
        self.row
    }
}

/// Times one cell in this process. An allocation failure reported by the
/// tensor library becomes an OOM row; infallible allocations that fail still
/// abort, which is why [`run_scaling_isolated`] exists.
pub fn run_cell(arch: &ArchSpec, reps: usize, seed: u64) -> BenchResult<SweepRow> {
    let mut cell = Cell::prepare(arch, seed)?;
    for _ in 0..reps {
        cell.time_once()?;
    }
    Ok(cell.finish())
}

/// Times every cell in this process. Repetitions are interleaved, one round
/// over all cells at a time, so slow drift in machine load affects every
/// length alike instead of skewing the ratios between them.
pub fn run_scaling(spec: &SweepSpec) -> BenchResult<Vec<SweepRow>> {
    check_threads()?;
    spec.validate()?;
    let mut cells = spec
        .cells()
        .iter()
        .map(|arch| Cell::prepare(arch, spec.seed))
        .collect::<BenchResult<Vec<_>>>()?;
    for _ in 0..spec.reps {
        for cell in &mut cells {
            cell.time_once()?;
        }
    }
    Ok(cells.into_iter().map(Cell::finish).collect())
}

/// Command-line flags that make the `cell` subcommand rebuild `arch`.
pub fn cell_args(arch: &ArchSpec, reps: usize, seed: u64, mem_limit: Option<usize>) -> Vec<String> {
    let mut args: Vec<String> = vec!["cell".into()];
    let mut push = |k: &str, v: String| {
        args.push(format!("--{k}"));
        args.push(v);
    };
    push("n", arch.n.to_string());
    push("variant", arch.variant.to_string());
    push("mode", arch.mode.to_string());
    push("layers", arch.layers.to_string());
    push("d", arch.d.to_string());
    push("h", arch.h.to_string());
    push("ffn", arch.ffn.to_string());
    push("w", arch.w.to_string());
    push("r", arch.r.to_string());
    push("l", arch.l.to_string());
    push("docs", arch.docs.to_string());
    push("dual-ln", arch.dual_ln.to_string());
    push("reps", reps.to_string());
    push("seed", seed.to_string());
    if let Some(limit) = mem_limit {
        push("mem-limit", limit.to_string());
    }
    args
}

/// Runs every cell in its own child process of `exe` (the `lsattn` binary),
/// optionally under an allocation limit. A child that reports an allocation
/// failure, or is killed by one (abort), yields an OOM row.
pub fn run_scaling_isolated(
    spec: &SweepSpec,
    exe: &Path,
    mem_limit: Option<usize>,
) -> BenchResult<Vec<SweepRow>> {
    check_threads()?;
    spec.validate()?;
    let mut rows = Vec::new();
    for arch in spec.cells() {
        let out = Command::new(exe)
            .args(cell_args(&arch, spec.reps, spec.seed, mem_limit))
            .output()?;
        let row = if out.status.success() {
            let stdout = String::from_utf8_lossy(&out.stdout);
            let line = stdout.lines().last().unwrap_or("");
            SweepRow::from_csv(line)?
        } else if out.status.code().is_none() {
            SweepRow {
                oom: true,
                ..SweepRow::new(&arch, count_flops(&arch)?.total())
            }
        } else {
            return Err(BenchError::Invariant(format!(
                "cell {arch} failed ({}): {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        };
        rows.push(row);
    }
    Ok(rows)
}
