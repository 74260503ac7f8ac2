//! Quick invariant suite behind `lsattn check`. Each check is a scaled-down
//! version of a test in the workspace, cheap enough to run on any build.

use std::fmt;

use lsattn_core::attention::{
    aggregate_plain_head, attention_head, causal_aggregate_head, dynamic_projection,
    full_attention_head,
};
use lsattn_core::{
    finite_diff_check_with, Eager, HeadParams, InitScheme, LsConfig, Mode, Ops, Recording, Result,
    Rng, Tape, Tensor, Var, Variant,
};
use lsattn_lm::{build_model, evaluate_bpc, ModelConfig};

use crate::flops::{count_flops, measure_flops, ArchSpec};
use crate::norms::{run_norm_probe, NormSpec};
use crate::presets::builtin;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, r: Result<(bool, String)>) -> CheckResult {
    match r {
        Ok((passed, detail)) => CheckResult {
            name,
            passed,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_checks(seed: u64) -> Vec<CheckResult> {
    vec![
        outcome("flop_table", flop_table()),
        outcome("flops_match_counters", flops_match_counters(seed)),
        outcome("oracle_equivalence", oracle_equivalence(seed)),
        outcome("row_stochastic", row_stochastic(seed)),
        outcome("projection_columns", projection_columns(seed)),
        outcome("causality", causality(seed)),
        outcome("gradients", gradients(seed)),
        outcome("norm_probe", norm_probe()),
        outcome("untrained_bpc", untrained_bpc(seed)),
    ]
}

fn random_head(rng: &mut Rng, cfg: &LsConfig) -> HeadParams {
    HeadParams::init(rng, cfg, InitScheme::default())
}

fn flop_table() -> Result<(bool, String)> {
    let mut ok = true;
    let mut notes = Vec::new();
    let full = [
        ("lra-listops", 1_210_056_704u64, "1.21 G"),
        ("lra-text", 0, "4.57 G"),
        ("lra-retrieval", 0, "9.14 G"),
    ];
    let long_short = [0.20, 0.40, 0.80];
    for ((name, exact, giga), ls) in full.iter().zip(long_short) {
        let arch = builtin(name).expect("built-in preset");
        let f = count_flops(&ArchSpec {
            variant: Variant::Full,
            ..arch.clone()
        })?;
        ok &= f.giga() == *giga && (*exact == 0 || f.total() == *exact);
        let l = count_flops(&arch)?.total() as f64 / 1e9;
        ok &= (l / ls - 1.0).abs() <= 0.10;
        notes.push(format!("{name} full {} long-short {l:.3} G", f.giga()));
    }
    Ok((ok, notes.join("; ")))
}

fn flops_match_counters(seed: u64) -> Result<(bool, String)> {
    let mut rng = Rng::new(seed);
    let mut checked = 0;
    for i in 0..24 {
        let mode = if i % 2 == 0 {
            Mode::Bidirectional
        } else {
            Mode::Causal
        };
        let variant = Variant::ALL[(i / 2) % 4];
        if mode == Mode::Causal && variant == Variant::Projection {
            continue;
        }
        let w = 2 * (1 + rng.below(3));
        let arch = ArchSpec {
            layers: 1 + rng.below(2),
            d: 8,
            h: 1 + rng.below(2),
            ffn: 12,
            n: 1 + rng.below(40),
            w,
            r: 1 + rng.below(4),
            l: 1 + rng.below(2 * w),
            mode,
            variant,
            dual_ln: rng.below(2) == 1,
            docs: 1 + rng.below(2),
        };
        let closed = count_flops(&arch)?.total();
        let measured = measure_flops(&arch, seed + i as u64)?;
        if closed != measured {
            return Ok((
                false,
                format!("{arch}: closed form {closed}, counters {measured}"),
            ));
        }
        checked += 1;
    }
    Ok((true, format!("{checked} configs agree exactly")))
}

fn oracle_equivalence(seed: u64) -> Result<(bool, String)> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = 1 + rng.below(64);
        let w = 2 * n.div_ceil(2) + 2 * rng.below(4);
        let cfg = LsConfig::bidirectional(n, 8, 1, w, 0);
        let p = random_head(&mut rng, &cfg);
        let x = rng.normal_matrix(n, 8);
        let a = aggregate_plain_head(&Eager, &x, &p, &cfg)?;
        let b = full_attention_head(&Eager, &x, &p)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    Ok((
        worst <= 1e-12,
        format!("max |diff| {worst:e} over 20 instances"),
    ))
}

fn row_stochastic(seed: u64) -> Result<(bool, String)> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for i in 0..40 {
        let n = 1 + rng.below(32);
        let w = 2 * (1 + rng.below(4));
        let r = rng.below(5);
        let cfg = if i % 2 == 0 {
            LsConfig::bidirectional(n, 8, 2, w, r)
        } else {
            LsConfig::causal(n, 8, 2, w, r, 1 + rng.below(2 * w))
        }
        .with_dual_ln(rng.below(2) == 1);
        let p = random_head(&mut rng, &cfg);
        let x = rng.normal_matrix(n, 8).scale(4.0);
        for variant in Variant::ALL {
            let c = variant.restrict(&cfg);
            if c.validate().is_err() || (c.mode == Mode::Causal && variant == Variant::Projection) {
                continue;
            }
            let rec = Recording::new();
            attention_head(&rec, &x, &p, &c, variant)?;
            for (weights, _) in rec.softmaxes() {
                for i in 0..weights.rows() {
                    worst = worst.max((weights.row(i).iter().sum::<f64>() - 1.0).abs());
                    rows += 1;
                }
            }
        }
    }
    Ok((
        worst <= 1e-12,
        format!("max |row sum - 1| {worst:e} over {rows} rows"),
    ))
}

fn projection_columns(seed: u64) -> Result<(bool, String)> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = 1 + rng.below(64);
        let cfg = LsConfig::bidirectional(n, 8, 1, 0, 1 + rng.below(8));
        let p = random_head(&mut rng, &cfg);
        let x = rng.normal_matrix(n, 8).scale(3.0);
        let proj = dynamic_projection(&Eager, &x, &p, &cfg)?;
        for s in proj.p.sum_rows().data() {
            worst = worst.max((s - 1.0).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max |column sum - 1| {worst:e}")))
}

fn causality(seed: u64) -> Result<(bool, String)> {
    let n = 16;
    let cfg = LsConfig::causal(n, 8, 2, 4, 2, 4).with_dual_ln(true);
    let mut rng = Rng::new(seed);
    for variant in [Variant::Full, Variant::Window, Variant::LongShort] {
        let c = variant.restrict(&cfg);
        let p = random_head(&mut rng, &c);
        let x = rng.normal_matrix(n, 8);
        let base = attention_head(&Eager, &x, &p, &c, variant)?;
        for t in 0..n {
            let mut y = x.clone();
            for i in t + 1..n {
                for v in y.row_mut(i) {
                    *v += 1.0;
                }
            }
            let out = attention_head(&Eager, &y, &p, &c, variant)?;
            if out.slice_rows(0, t + 1)? != base.slice_rows(0, t + 1)? {
                return Ok((
                    false,
                    format!("{variant}: row <= {t} changed by future tokens"),
                ));
            }
        }
    }
    Ok((
        true,
        format!("n={n}, every t, outputs before t bit-identical"),
    ))
}

fn gradients(seed: u64) -> Result<(bool, String)> {
    let cases = [
        (
            LsConfig::bidirectional(8, 8, 1, 2, 3).with_dual_ln(true),
            Variant::LongShort,
        ),
        (LsConfig::bidirectional(8, 8, 1, 2, 0), Variant::Full),
        (
            LsConfig::causal(8, 8, 1, 2, 1, 4).with_dual_ln(true),
            Variant::LongShort,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (i, (cfg, variant)) in cases.iter().enumerate() {
        let mut rng = Rng::new(seed + i as u64);
        let p = random_head(&mut rng, cfg);
        let x = rng.normal_matrix(cfg.n, cfg.d);
        let weights = rng.normal_matrix(cfg.n, cfg.head_dim());
        let mut params = vec![x];
        params.extend(p.leaves().into_iter().cloned());
        let coords = params.iter().map(Tensor::len).sum::<usize>().max(200);
        let report = finite_diff_check_with(
            |tape: &Tape, vars: &[Var]| {
                let hp = HeadParams::from_iter(vars[1..].iter().copied());
                let out = match (cfg.mode, variant) {
                    (Mode::Causal, _) => causal_aggregate_head(tape, &vars[0], &hp, cfg)?,
                    _ => attention_head(tape, &vars[0], &hp, cfg, *variant)?,
                };
                let weighted = tape.mul_const(&out, &weights)?;
                tape.sum_all(&weighted)
            },
            &params,
            1e-5,
            coords,
        )?;
        worst = worst.max(report.max_rel_error);
    }
    Ok((worst < 1e-5, format!("max relative error {worst:e}")))
}

fn norm_probe() -> Result<(bool, String)> {
    let report = run_norm_probe(&NormSpec::default())
        .map_err(|e| lsattn_core::Error::Config(e.to_string()))?;
    let with_in_band =
        report.samples.iter().filter(|s| s.dual_ln).all(|s| {
            (0.98..=1.02).contains(&s.key_ratio) && (0.98..=1.02).contains(&s.value_ratio)
        });
    let plain = report.mean_key_ratio(false);
    Ok((
        with_in_band && plain > 1.05,
        format!(
            "mean key ratio {plain:.3} without DualLN, {:.4} with",
            report.mean_key_ratio(true)
        ),
    ))
}

fn untrained_bpc(seed: u64) -> Result<(bool, String)> {
    let cfg = ModelConfig::desk(16);
    let params = build_model(&cfg, &mut Rng::new(seed))?;
    let mut rng = Rng::new(seed ^ 0x5eed);
    let bytes: Vec<u8> = (0..4096).map(|_| rng.below(256) as u8).collect();
    let bpc = evaluate_bpc(&params, &cfg, &bytes)?;
    Ok((
        (bpc - 8.0).abs() < 0.1,
        format!("{bpc:.4} bits per byte on random bytes"),
    ))
}
