mod common;

use common::*;
use lsattn_core::attention::{
    aggregate_plain_head, attention_head, causal_aggregate_head, causal_segment_projection,
    causal_window_span, dynamic_projection, full_attention_head, multi_head, multi_head_concurrent,
    project_segment, window_span,
};
use lsattn_core::{Eager, LsConfig, Mode, MultiHeadParams, Recording, Rng, Tensor, Variant};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

fn bidirectional_config() -> impl Strategy<Value = LsConfig> {
    (1usize..=32, 1usize..=2, 1usize..=4, 0usize..=4, 0usize..=4)
        .prop_filter("one branch must exist", |&(_, _, _, hw, r)| hw + r > 0)
        .prop_map(|(n, h, dk, hw, r)| LsConfig::bidirectional(n, h * dk, h, 2 * hw, r))
}

fn causal_config() -> impl Strategy<Value = LsConfig> {
    (
        1usize..=32,
        1usize..=2,
        1usize..=4,
        1usize..=4,
        0usize..=3,
        1usize..=8,
    )
        .prop_filter(
            "window must cover half a segment",
            |&(_, _, _, hw, _, l)| 4 * hw >= l,
        )
        .prop_map(|(n, h, dk, hw, r, l)| LsConfig::causal(n, h * dk, h, 2 * hw, r, l))
}

fn stochastic(rec: &Recording) -> Result<usize, TestCaseError> {
    let all = rec.softmaxes();
    for (weights, mask) in &all {
        for i in 0..weights.rows() {
            let row = weights.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (j, &v) in row.iter().enumerate() {
                if mask.get(i, j) {
                    prop_assert!(v >= 0.0);
                } else {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }
    Ok(all.len())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bidirectional_weights_are_row_stochastic(cfg in bidirectional_config(), seed in any::<u64>(), dual in any::<bool>()) {
        let cfg = cfg.with_dual_ln(dual);
        let p = random_head(seed, &cfg);
        let x = random_x(seed ^ 1, cfg.n, cfg.d).scale(4.0);
        for variant in Variant::ALL {
            let c = variant.restrict(&cfg);
            if c.validate().is_err() {
                continue;
            }
            let rec = Recording::new();
            attention_head(&rec, &x, &p, &c, variant).unwrap();
            prop_assert!(stochastic(&rec)? > 0);
        }
    }

    #[test]
    fn causal_weights_are_row_stochastic(cfg in causal_config(), seed in any::<u64>(), dual in any::<bool>()) {
        let cfg = cfg.with_dual_ln(dual);
        let p = random_head(seed, &cfg);
        let x = random_x(seed ^ 2, cfg.n, cfg.d).scale(4.0);
        for variant in [Variant::Full, Variant::Window, Variant::LongShort] {
            let rec = Recording::new();
            attention_head(&rec, &x, &p, &cfg, variant).unwrap();
            prop_assert!(stochastic(&rec)? > 0);
        }
    }

    #[test]
    fn spans_have_2w_slots_padded_only_near_edges(blocks in 1usize..8, hw in 1usize..5, t_frac in 0.0f64..1.0) {
        let w = 2 * hw;
        let n = blocks * w;
        let t = ((n as f64 * t_frac) as usize).min(n - 1);
        let span = window_span(t, &LsConfig::bidirectional(n, 2, 1, w, 0)).unwrap();
        prop_assert_eq!(span.keys.len(), 2 * w);
        let real = span.real_keys();
        prop_assert!(real.windows(2).all(|p| p[0] < p[1]));
        prop_assert_eq!(real, window_positions(t, w, n));
        if span.padding() > 0 {
            prop_assert!(t < w || t >= n - w);
        }
    }

    #[test]
    fn projection_columns_are_stochastic(cfg in bidirectional_config(), seed in any::<u64>()) {
        prop_assume!(cfg.r > 0);
        let p = random_head(seed, &cfg);
        let x = random_x(seed ^ 3, cfg.n, cfg.d).scale(5.0);
        let pkv = dynamic_projection(&Eager, &x, &p, &cfg).unwrap();
        for j in 0..cfg.r {
            let mut s = 0.0;
            for i in 0..cfg.n {
                prop_assert!(pkv.p.at(i, j) >= 0.0);
                s += pkv.p.at(i, j);
            }
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_window_matches_full_attention(n in 1usize..=64, extra in 0usize..3, dk in 1usize..=8, seed in any::<u64>()) {
        let w = (n + n % 2) + 2 * extra;
        let cfg = LsConfig::bidirectional(n, dk, 1, w, 0);
        let p = random_head(seed, &cfg);
        let x = random_x(seed ^ 4, n, dk);
        let a = aggregate_plain_head(&Eager, &x, &p, &cfg).unwrap();
        let b = full_attention_head(&Eager, &x, &p).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn projection_is_permutation_covariant(n in 2usize..=24, r in 1usize..=4, seed in any::<u64>()) {
        let cfg = LsConfig::bidirectional(n, 4, 1, 0, r);
        let p = random_head(seed, &cfg);
        let x = random_x(seed ^ 5, n, 4);
        let mut rng = Rng::new(seed ^ 6);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        let xp = Tensor::from_fn(n, 4, |i, c| x.at(perm[i], c));
        let a = dynamic_projection(&Eager, &x, &p, &cfg).unwrap();
        let b = dynamic_projection(&Eager, &xp, &p, &cfg).unwrap();
        for i in 0..n {
            for j in 0..r {
                prop_assert!((b.p.at(i, j) - a.p.at(perm[i], j)).abs() < 1e-12);
            }
        }
        prop_assert!(a.kbar.max_abs_diff(&b.kbar) < 1e-12);
        prop_assert!(a.vbar.max_abs_diff(&b.vbar) < 1e-12);
    }

    #[test]
    fn concurrent_heads_match_sequential(cfg in bidirectional_config(), seed in any::<u64>()) {
        let cfg = LsConfig { h: 4, d: 4 * cfg.head_dim(), ..cfg };
        let params = MultiHeadParams::init(&mut Rng::new(seed), &cfg, Default::default());
        let x = random_x(seed ^ 7, cfg.n, cfg.d);
        let head = |ops: &Eager, x: &Tensor, p: &lsattn_core::HeadParams| {
            attention_head(ops, x, p, &cfg, Variant::LongShort)
        };
        let seq = multi_head(&Eager, &x, &params, head).unwrap();
        let par = multi_head_concurrent(&x, &params, head).unwrap();
        prop_assert_eq!(seq, par);
    }

    #[test]
    fn causal_outputs_ignore_the_future(cfg in causal_config(), seed in any::<u64>(), dual in any::<bool>()) {
        let cfg = cfg.with_dual_ln(dual);
        let n = cfg.n;
        let p = random_head(seed, &cfg);
        let x = random_x(seed ^ 8, n, cfg.d);
        let mut rng = Rng::new(seed ^ 9);
        let t = rng.below(n);
        let mut x2 = x.clone();
        for pos in t + 1..n {
            for v in x2.row_mut(pos) {
                *v = rng.normal() * 10.0;
            }
        }
        for variant in [Variant::Full, Variant::Window, Variant::LongShort] {
            let a = attention_head(&Eager, &x, &p, &cfg, variant).unwrap();
            let b = attention_head(&Eager, &x2, &p, &cfg, variant).unwrap();
            prop_assert_eq!(a.slice_rows(0, t + 1).unwrap(), b.slice_rows(0, t + 1).unwrap());
        }
    }

    #[test]
    fn segment_projection_is_local(cfg in causal_config(), seed in any::<u64>()) {
        prop_assume!(cfg.r > 0 && cfg.n > cfg.l);
        let (n, l) = (cfg.n, cfg.l);
        let p = random_head(seed, &cfg);
        let x = random_x(seed ^ 10, n, cfg.d);
        let s = Rng::new(seed).below((n - 1) / l);
        let mut x2 = x.clone();
        for pos in (0..n).filter(|&i| i / l != s) {
            x2.row_mut(pos).iter_mut().for_each(|v| *v += 1.5);
        }
        prop_assert_eq!(project_segment(&x, &p, &cfg, s).unwrap(), project_segment(&x2, &p, &cfg, s).unwrap());
    }

    #[test]
    fn batched_and_recurrent_segments_agree(cfg in causal_config(), seed in any::<u64>()) {
        prop_assume!(cfg.r > 0);
        let p = random_head(seed, &cfg);
        let x = random_x(seed ^ 11, cfg.n, cfg.d);
        let seg = causal_segment_projection(&x, &p, &cfg).unwrap();
        for s in 0..seg.segments() {
            let (ps, kb, vb) = project_segment(&x, &p, &cfg, s).unwrap();
            prop_assert_eq!(&ps, &seg.p[s]);
            prop_assert_eq!(&kb, &seg.kbar[s]);
            prop_assert_eq!(&vb, &seg.vbar[s]);
        }
    }

    #[test]
    fn causal_span_count_matches_attendable_slots(cfg in causal_config(), seed in any::<u64>()) {
        let (n, w, r, l) = (cfg.n, cfg.w, cfg.r, cfg.l);
        let p = random_head(seed, &cfg);
        let x = random_x(seed ^ 12, n, cfg.d);
        let rec = Recording::new();
        causal_aggregate_head(&rec, &x, &p, &cfg).unwrap();
        // Segment projections run first, then one softmax per query block.
        let projected = if r > 0 { (n - 1) / l } else { 0 };
        let masks: Vec<_> = rec.softmaxes().into_iter().skip(projected).map(|(_, m)| m).collect();
        let mut t = 0;
        for mask in &masks {
            for i in 0..mask.shape()[0] {
                let home = t / w * w;
                let expected = (t - home + 1) + w.min(home) + r * (t / l);
                let span = causal_window_span(t, &cfg).unwrap();
                prop_assert_eq!(span.attendable_count(r), expected);
                prop_assert_eq!(span.real_keys().len(), (t - home + 1) + w.min(home));
                prop_assert!(span.real_keys().iter().all(|&k| k <= t));
                prop_assert_eq!(mask.row(i).iter().filter(|&&b| b).count(), expected);
                t += 1;
            }
        }
        prop_assert_eq!(t, n);
    }
}

#[test]
fn projected_keys_shrink_at_initialization() {
    let cfg = LsConfig::bidirectional(128, 32, 1, 8, 8);
    let (mut local, mut global) = (0.0, 0.0);
    for seed in 0..10 {
        let p = random_head(seed, &cfg);
        let x = random_x(seed + 1000, cfg.n, cfg.d);
        let keys = x.matmul(&p.wk).unwrap();
        let pkv = dynamic_projection(&Eager, &x, &p, &cfg).unwrap();
        let mean = |t: &Tensor| t.row_norms().iter().sum::<f64>() / t.rows() as f64;
        local += mean(&keys);
        global += mean(&pkv.kbar);
    }
    assert!(global < local, "projected {global} vs local {local}");
}

#[test]
fn causal_mode_selects_causal_heads() {
    let cfg = LsConfig::causal(8, 4, 1, 2, 1, 4);
    assert_eq!(cfg.mode, Mode::Causal);
    let p = random_head(1, &cfg);
    let x = random_x(2, 8, 4);
    assert_eq!(
        attention_head(&Eager, &x, &p, &cfg, Variant::LongShort).unwrap(),
        causal_aggregate_head(&Eager, &x, &p, &cfg).unwrap()
    );
    assert!(attention_head(&Eager, &x, &p, &cfg, Variant::Projection).is_err());
}
