//! Acceptance criteria 1-9, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every line is printed even when all
//! criteria pass. Exits nonzero if any hard criterion fails; the DualLN
//! ablation vote in criterion 8 is soft and only reported.

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use lsattn_bench::ablation::{run_seed, ABLATION_STEPS};
use lsattn_bench::alloc::TrackingAllocator;
use lsattn_bench::norms::{run_norm_probe, NormSpec};
use lsattn_bench::presets::builtin;
use lsattn_bench::{count_flops, run_scaling, ArchSpec, SweepRow, SweepSpec};
use lsattn_core::attention::{
    aggregate_dualln_head, aggregate_plain_head, attention_head, causal_aggregate_head,
    dynamic_projection, full_attention_head,
};
use lsattn_core::encoder::block_forward;
use lsattn_core::{
    finite_diff_check_with, BlockParams, Eager, HeadParams, InitScheme, LnParams, LsConfig, Ops,
    Recording, Result, Rng, Tape, Tensor, Var, Variant,
};
use lsattn_lm::{build_model, evaluate_bpc, train, ModelConfig};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

struct Outcome {
    passed: bool,
    detail: String,
    /// Soft findings are reported but do not fail the run.
    soft: Option<(bool, String)>,
}

fn hard(passed: bool, detail: String) -> Outcome {
    Outcome {
        passed,
        detail,
        soft: None,
    }
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "FLOP table", flop_table),
        (2, "oracle equivalence", oracle_equivalence),
        (3, "row/column stochasticity", stochasticity),
        (4, "causality", causality),
        (5, "gradient checks", gradients),
        (6, "norm-ratio probe", norm_probe),
        (7, "scaling law", scaling),
        (8, "toy LM", toy_lm),
        (9, "non-reproducibility statement", statement),
    ];
    let mut failed = 0;
    for (number, title, run) in criteria {
        let clock = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            hard(false, format!("panicked: {msg}"))
        });
        let secs = clock.elapsed().as_secs_f64();
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {number} ({title}): {tag} [{secs:.1}s] {}",
            outcome.detail
        );
        if let Some((ok, detail)) = outcome.soft {
            let tag = if ok { "PASS" } else { "FAIL" };
            println!("criterion {number} ({title}, soft): {tag} {detail}");
        }
        failed += usize::from(!outcome.passed);
    }
    if failed > 0 {
        println!("{failed} hard criteria failed");
        std::process::exit(1);
    }
}

fn random_head(rng: &mut Rng, cfg: &LsConfig) -> HeadParams {
    HeadParams::init(rng, cfg, InitScheme::default())
}

/// A head whose layer norms have non-trivial gains and biases.
fn random_head_with_ln(rng: &mut Rng, cfg: &LsConfig) -> HeadParams {
    let p = random_head(rng, cfg);
    let dk = cfg.head_dim();
    let mut ln = |centre: f64, spread: f64| {
        Tensor::from_fn(1, dk, |_, _| centre + rng.uniform(-spread, spread))
    };
    HeadParams {
        ln_local: LnParams {
            gain: ln(1.0, 0.5),
            bias: ln(0.0, 0.2),
        },
        ln_global: LnParams {
            gain: ln(1.0, 0.5),
            bias: ln(0.0, 0.2),
        },
        ..p
    }
}

fn flop_table() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, full_g, ls_g) in [
        ("lra-listops", "1.21 G", 0.20),
        ("lra-text", "4.57 G", 0.40),
        ("lra-retrieval", "9.14 G", 0.80),
    ] {
        let arch = builtin(name).unwrap();
        let full = count_flops(&ArchSpec {
            variant: Variant::Full,
            ..arch.clone()
        })
        .unwrap();
        let ls = count_flops(&arch).unwrap().total() as f64 / 1e9;
        let dev = ls / ls_g - 1.0;
        ok &= full.giga() == full_g && dev.abs() <= 0.10;
        parts.push(format!(
            "{name}: full {} ({}), long-short {ls:.3} G ({:+.1}%)",
            full.giga(),
            full.total(),
            100.0 * dev
        ));
    }
    let listops = count_flops(&ArchSpec {
        variant: Variant::Full,
        ..builtin("lra-listops").unwrap()
    })
    .unwrap();
    ok &= listops.total() == 1_210_056_704;
    hard(ok, parts.join("; "))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = Rng::new(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = 1 + rng.below(64);
        let h = 1 + rng.below(2);
        let d = h * (1 + rng.below(8));
        let w = 2 * n.div_ceil(2) + 2 * rng.below(4);
        let cfg = LsConfig::bidirectional(n, d, h, w, 0);
        let p = random_head(&mut rng, &cfg);
        let x = rng.normal_matrix(n, d).scale(2.0);
        let plain = aggregate_plain_head(&Eager, &x, &p, &cfg).unwrap();
        let full = full_attention_head(&Eager, &x, &p).unwrap();
        worst = worst.max(plain.max_abs_diff(&full));
    }
    hard(
        worst <= 1e-12,
        format!("20 instances, n <= 64, max |diff| = {worst:.2e}"),
    )
}

fn stochasticity() -> Outcome {
    let mut rng = Rng::new(3);
    let (mut row_worst, mut col_worst) = (0.0f64, 0.0f64);
    let (mut rows, mut configs) = (0, 0);
    while configs < 100 {
        let n = 1 + rng.below(48);
        let h = 1 + rng.below(2);
        let d = h * (1 + rng.below(4));
        let w = 2 * rng.below(5);
        let r = rng.below(6);
        let causal = rng.below(2) == 1;
        let cfg = if causal {
            LsConfig::causal(n, d, h, w.max(2), r, 1 + rng.below(2 * w.max(2)))
        } else {
            LsConfig::bidirectional(n, d, h, w, r)
        }
        .with_dual_ln(rng.below(2) == 1);
        if cfg.validate().is_err() {
            continue;
        }
        configs += 1;
        let p = random_head(&mut rng, &cfg);
        let x = rng.normal_matrix(n, d).scale(4.0);
        for variant in Variant::ALL {
            let c = variant.restrict(&cfg);
            if c.validate().is_err() || (causal && variant == Variant::Projection) {
                continue;
            }
            let rec = Recording::new();
            attention_head(&rec, &x, &p, &c, variant).unwrap();
            for (weights, mask) in rec.softmaxes() {
                for i in 0..weights.rows() {
                    row_worst = row_worst.max((weights.row(i).iter().sum::<f64>() - 1.0).abs());
                    for (j, &v) in weights.row(i).iter().enumerate() {
                        assert!(if mask.get(i, j) { v >= 0.0 } else { v == 0.0 });
                    }
                    rows += 1;
                }
            }
        }
        if !causal && r > 0 {
            let pr =
                dynamic_projection(&Eager, &x, &p, &Variant::Projection.restrict(&cfg)).unwrap();
            for s in pr.p.sum_rows().data() {
                col_worst = col_worst.max((s - 1.0).abs());
            }
        }
    }
    hard(
        row_worst <= 1e-12 && col_worst <= 1e-12,
        format!("100 configs, {rows} rows: max |row sum - 1| = {row_worst:.1e}, max |P column sum - 1| = {col_worst:.1e}"),
    )
}

fn causality() -> Outcome {
    let n = 32;
    let mut checks = 0;
    for seed in 0..10u64 {
        let mut rng = Rng::new(400 + seed);
        let (w, l, r) = (4, 4, 1 + rng.below(3));
        let cfg = LsConfig::causal(n, 8, 2, w, r, l);
        let x = rng.normal_matrix(n, 8);
        let mut runs: Vec<Box<dyn Fn(&Tensor) -> Tensor>> = Vec::new();
        for (variant, dual) in [
            (Variant::Full, false),
            (Variant::Window, true),
            (Variant::LongShort, false),
            (Variant::LongShort, true),
        ] {
            let c = variant.restrict(&cfg.clone().with_dual_ln(dual));
            let p = random_head_with_ln(&mut rng, &c);
            runs.push(Box::new(move |x| {
                attention_head(&Eager, x, &p, &c, variant).unwrap()
            }));
        }
        let block_cfg = cfg.clone().with_dual_ln(true);
        let block = BlockParams::init(&mut rng, &block_cfg, 16, InitScheme::default());
        runs.push(Box::new(move |x| {
            block_forward(&Eager, x, &block, &block_cfg, Variant::LongShort).unwrap()
        }));

        for run in &runs {
            let base = run(&x);
            for t in 0..n {
                let mut y = x.clone();
                for i in t + 1..n {
                    for v in y.row_mut(i) {
                        *v = -*v + 3.0;
                    }
                }
                let out = run(&y);
                if out.slice_rows(0, t + 1).unwrap() != base.slice_rows(0, t + 1).unwrap() {
                    return hard(false, format!("seed {seed}: rows <= {t} changed"));
                }
                checks += 1;
            }
        }
    }
    hard(
        true,
        format!("n = {n}, 10 seeds, every t, 5 causal stacks: {checks} prefixes bit-identical"),
    )
}

type HeadFn = fn(&Tape, &Var, &HeadParams<Var>, &LsConfig) -> Result<Var>;

fn gradients() -> Outcome {
    let bidir = LsConfig::bidirectional(8, 8, 1, 2, 3);
    let cases: [(&str, HeadFn, LsConfig); 6] = [
        (
            "full",
            |t, x, p, _| full_attention_head(t, x, p),
            LsConfig::bidirectional(8, 8, 1, 2, 0),
        ),
        (
            "window",
            |t, x, p, c| attention_head(t, x, p, c, Variant::Window),
            bidir.clone(),
        ),
        (
            "projection",
            |t, x, p, c| attention_head(t, x, p, c, Variant::Projection),
            bidir.clone(),
        ),
        (
            "plain",
            |t, x, p, c| aggregate_plain_head(t, x, p, c),
            bidir.clone(),
        ),
        (
            "dualln",
            |t, x, p, c| aggregate_dualln_head(t, x, p, c),
            bidir,
        ),
        (
            "causal",
            |t, x, p, c| causal_aggregate_head(t, x, p, c),
            LsConfig::causal(8, 8, 1, 2, 1, 4).with_dual_ln(true),
        ),
    ];
    // Judged at step 1e-4. At 1e-5 the difference quotient's roundoff
    // (~1e-11 absolute) is already 1e-5 relative on the smallest gradient
    // entries (~1e-6), so that step is reported but not judged.
    let mut judged = Vec::new();
    let mut fine = Vec::new();
    let mut ok = true;
    for (name, head, cfg) in cases {
        let mut worst = [0.0f64; 2];
        for seed in 0..5u64 {
            let mut rng = Rng::new(500 + seed);
            let p = random_head_with_ln(&mut rng, &cfg);
            let x = rng.normal_matrix(cfg.n, cfg.d);
            let weights = rng.normal_matrix(cfg.n, cfg.head_dim());
            let mut params = vec![x];
            params.extend(p.leaves().into_iter().cloned());
            let coords = params.iter().map(Tensor::len).sum::<usize>();
            for (slot, step) in [1e-4, 1e-5].into_iter().enumerate() {
                let report = finite_diff_check_with(
                    |tape, vars| {
                        let hp = HeadParams::from_iter(vars[1..].iter().copied());
                        let out = head(tape, &vars[0], &hp, &cfg)?;
                        let weighted = tape.mul_const(&out, &weights)?;
                        tape.sum_all(&weighted)
                    },
                    &params,
                    step,
                    coords.max(200),
                )
                .unwrap();
                assert_eq!(report.coords_checked, coords);
                worst[slot] = worst[slot].max(report.max_rel_error);
            }
        }
        ok &= worst[0] < 1e-5;
        judged.push(format!("{name} {:.1e}", worst[0]));
        fine.push(format!("{name} {:.1e}", worst[1]));
    }
    hard(
        ok,
        format!(
            "n = 8, 5 seeds, all coordinates, max relative error at step 1e-4: {} (at step 1e-5: {})",
            judged.join(", "),
            fine.join(", ")
        ),
    )
}

fn norm_probe() -> Outcome {
    let spec = NormSpec::default();
    let report = run_norm_probe(&spec).unwrap();
    let plain = report.mean_key_ratio(false);
    let dual: Vec<f64> = report
        .samples
        .iter()
        .filter(|s| s.dual_ln)
        .flat_map(|s| [s.key_ratio, s.value_ratio])
        .collect();
    let lo = dual.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = dual.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hard(
        plain > 1.05 && lo >= 0.98 && hi <= 1.02,
        format!(
            "n = {}, r = {}, {} seeds: mean key ratio {plain:.3} without DualLN; with DualLN all ratios in [{lo:.4}, {hi:.4}]",
            spec.n,
            spec.r,
            spec.seeds.len()
        ),
    )
}

fn scaling() -> Outcome {
    let spec = SweepSpec {
        base: ArchSpec {
            layers: 1,
            ..builtin("lra-listops").unwrap()
        },
        ns: vec![1024, 2048, 4096],
        variants: vec![Variant::LongShort, Variant::Full],
        reps: 5,
        seed: 7,
    };
    let rows = run_scaling(&spec).unwrap();
    let of = |v: Variant| -> Vec<&SweepRow> { rows.iter().filter(|r| r.variant == v).collect() };
    let (ls, full) = (of(Variant::LongShort), of(Variant::Full));
    let ratio = |a: &SweepRow, b: &SweepRow| b.flops as f64 / a.flops as f64;
    let time = |a: &SweepRow, b: &SweepRow| b.wall_ms.unwrap() / a.wall_ms.unwrap();

    let ls_flops: Vec<f64> = ls.windows(2).map(|p| ratio(p[0], p[1])).collect();
    let ls_time: Vec<f64> = ls.windows(2).map(|p| time(p[0], p[1])).collect();
    // Below n = 2048 the linear terms still matter for full attention; the
    // quadratic check starts there.
    let full_flops = ratio(full[1], full[2]);
    let full_small = ratio(full[0], full[1]);
    let ok = ls_flops.iter().all(|r| (r - 2.0).abs() <= 0.10)
        && ls_time.iter().all(|&r| r <= 2.5)
        && (full_flops - 4.0).abs() <= 0.40;
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|r| format!("{r:.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    hard(
        ok,
        format!(
            "long-short FLOP ratios {} and wall-time ratios {} (1024->2048->4096); full FLOP ratio {full_flops:.3} at 2048->4096 ({full_small:.3} at 1024->2048, wall {:.2}); peak bytes long-short {} / full {} at n=4096",
            fmt(&ls_flops),
            fmt(&ls_time),
            time(full[1], full[2]),
            ls[2].peak_bytes.unwrap_or(0),
            full[2].peak_bytes.unwrap_or(0)
        ),
    )
}

fn toy_lm() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;

    let cfg = ModelConfig::desk(16);
    let params = build_model(&cfg, &mut Rng::new(5)).unwrap();
    let mut rng = Rng::new(6);
    let random: Vec<u8> = (0..4096).map(|_| rng.below(256) as u8).collect();
    let bpc = evaluate_bpc(&params, &cfg, &random).unwrap();
    ok &= (bpc - 8.0).abs() <= 0.1;
    parts.push(format!("untrained {bpc:.3} BPC"));

    let cfg = ModelConfig {
        steps: 200,
        ..ModelConfig::desk(16)
    };
    let (_, report) = train(&cfg, &[b'z'; 2000]).unwrap();
    let hit = report
        .steps
        .iter()
        .find(|s| s.train_bpc() < 0.05)
        .map(|s| s.step);
    ok &= hit.is_some() && report.final_val_bpc() < 0.05;
    parts.push(format!(
        "one-byte corpus < 0.05 BPC at step {} (val {:.4} at 200)",
        hit.map_or("-".into(), |s| s.to_string()),
        report.final_val_bpc()
    ));

    let cfg = ModelConfig {
        steps: 2000,
        eval_every: 100,
        ..ModelConfig::desk(16)
    };
    let periodic: Vec<u8> = b"abcd".iter().copied().cycle().take(4000).collect();
    let (_, report) = train(&cfg, &periodic).unwrap();
    let hit = report.val_curve().into_iter().find(|&(_, v)| v < 0.5);
    ok &= hit.is_some();
    parts.push(format!(
        "periodic corpus val < 0.5 BPC at step {}",
        hit.map_or("-".into(), |(s, v)| format!("{s} ({v:.3})"))
    ));

    let mut wins = 0;
    let mut seeds = Vec::new();
    for seed in 0..5u64 {
        let r = run_seed(seed, ABLATION_STEPS).unwrap();
        let (a, b) = (
            r.with_dual_ln.final_val_bpc(),
            r.without_dual_ln.final_val_bpc(),
        );
        wins += usize::from(r.dual_ln_wins());
        seeds.push(format!("{a:.3}/{b:.3}"));
    }
    let soft = (
        wins >= 3,
        format!(
            "DualLN lower final val BPC on {wins}/5 seeds after {ABLATION_STEPS} steps (with/without: {})",
            seeds.join(", ")
        ),
    );
    Outcome {
        passed: ok,
        detail: parts.join("; "),
        soft: Some(soft),
    }
}

fn statement() -> Outcome {
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md"))
        .unwrap_or_default();
    let present = readme.contains("## Not reproduced");
    hard(
        present,
        "not reproduced: long-range benchmark accuracies, full-scale character-level BPC, and image classification \
         results; they need full-scale training. Their mechanisms are covered by criteria 1-8 (README: Not reproduced)"
            .into(),
    )
}
