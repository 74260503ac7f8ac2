//! Scalar reference evaluations. Plain nested loops over `Vec<Vec<f64>>`;
//! nothing here calls into the library's math.

#![allow(dead_code)]

use lsattn_core::{HeadParams, InitScheme, LsConfig, Rng, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let p = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..p)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn ln_row(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let mu = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    let s = (var + eps).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mu) / s * g + b)
        .collect()
}

/// `softmax(q·kᵀ/√d_k)·V` for one query over an explicit key list.
pub fn attend_row(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let scale = (q.len() as f64).sqrt();
    let logits: Vec<f64> = keys.iter().map(|k| dot(q, k) / scale).collect();
    let a = softmax(&logits);
    let width = values[0].len();
    (0..width)
        .map(|c| a.iter().zip(values).map(|(w, v)| w * v[c]).sum())
        .collect()
}

pub struct RefHead {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wp: Mat,
    pub ln_local: (Vec<f64>, Vec<f64>),
    pub ln_global: (Vec<f64>, Vec<f64>),
}

impl RefHead {
    pub fn new(p: &HeadParams) -> Self {
        RefHead {
            wq: mat(&p.wq),
            wk: mat(&p.wk),
            wv: mat(&p.wv),
            wp: mat(&p.wp),
            ln_local: (
                p.ln_local.gain.data().to_vec(),
                p.ln_local.bias.data().to_vec(),
            ),
            ln_global: (
                p.ln_global.gain.data().to_vec(),
                p.ln_global.bias.data().to_vec(),
            ),
        }
    }
}

/// Column-softmax projection of `k`, `v` rows using logits `x·wp`.
/// Returns `(p, kbar, vbar)` with `p` of shape `rows×r`.
pub fn project(x: &Mat, k: &Mat, v: &Mat, wp: &Mat) -> (Mat, Mat, Mat) {
    let logits = mm(x, wp);
    let n = x.len();
    let r = wp[0].len();
    let mut p = vec![vec![0.0; r]; n];
    for j in 0..r {
        let col: Vec<f64> = (0..n).map(|i| logits[i][j]).collect();
        for (i, w) in softmax(&col).into_iter().enumerate() {
            p[i][j] = w;
        }
    }
    let combine = |m: &Mat| -> Mat {
        (0..r)
            .map(|j| {
                (0..m[0].len())
                    .map(|c| (0..n).map(|i| p[i][j] * m[i][c]).sum())
                    .collect()
            })
            .collect()
    };
    let (kbar, vbar) = (combine(k), combine(v));
    (p, kbar, vbar)
}

fn ln_all(m: &Mat, ln: &(Vec<f64>, Vec<f64>), eps: f64) -> Mat {
    m.iter().map(|row| ln_row(row, &ln.0, &ln.1, eps)).collect()
}

pub fn full_head(x: &Mat, h: &RefHead) -> Mat {
    let (q, k, v) = (mm(x, &h.wq), mm(x, &h.wk), mm(x, &h.wv));
    q.iter().map(|qt| attend_row(qt, &k, &v)).collect()
}

pub fn causal_full_head(x: &Mat, h: &RefHead) -> Mat {
    let (q, k, v) = (mm(x, &h.wq), mm(x, &h.wk), mm(x, &h.wv));
    q.iter()
        .enumerate()
        .map(|(t, qt)| attend_row(qt, &k[..=t], &v[..=t]))
        .collect()
}

/// Real key positions of the bidirectional window of query `t`: the home
/// segment plus `w/2` tokens on either side, clipped to the sequence.
pub fn window_positions(t: usize, w: usize, n: usize) -> Vec<usize> {
    let home = (t / w * w) as isize;
    let half = (w / 2) as isize;
    (home - half..home + w as isize + half)
        .filter(|&p| p >= 0 && (p as usize) < n)
        .map(|p| p as usize)
        .collect()
}

/// Real key positions of the causal window of query `t`.
pub fn causal_window_positions(t: usize, w: usize) -> Vec<usize> {
    let home = t / w * w;
    (home.saturating_sub(w)..=t).collect()
}

/// Bidirectional long-short head, enumerated per query.
pub fn long_short_head(x: &Mat, h: &RefHead, w: usize, r: usize, dual_ln: bool, eps: f64) -> Mat {
    let n = x.len();
    let (q, mut k, mut v) = (mm(x, &h.wq), mm(x, &h.wk), mm(x, &h.wv));
    let (mut kbar, mut vbar) = if r > 0 {
        let (_, kb, vb) = project(x, &k, &v, &h.wp);
        (kb, vb)
    } else {
        (Vec::new(), Vec::new())
    };
    if dual_ln {
        k = ln_all(&k, &h.ln_local, eps);
        v = ln_all(&v, &h.ln_local, eps);
        kbar = ln_all(&kbar, &h.ln_global, eps);
        vbar = ln_all(&vbar, &h.ln_global, eps);
    }
    (0..n)
        .map(|t| {
            let pos = if w > 0 {
                window_positions(t, w, n)
            } else {
                Vec::new()
            };
            let mut keys: Mat = pos.iter().map(|&p| k[p].clone()).collect();
            let mut values: Mat = pos.iter().map(|&p| v[p].clone()).collect();
            keys.extend(kbar.iter().cloned());
            values.extend(vbar.iter().cloned());
            attend_row(&q[t], &keys, &values)
        })
        .collect()
}

/// Causal long-short head: causal window plus the projections of segments
/// `0..⌊t/l⌋`, each computed from its own `l` tokens only.
pub fn causal_head(
    x: &Mat,
    h: &RefHead,
    w: usize,
    r: usize,
    l: usize,
    dual_ln: bool,
    eps: f64,
) -> Mat {
    let n = x.len();
    let (q, k, v) = (mm(x, &h.wq), mm(x, &h.wk), mm(x, &h.wv));
    (0..n)
        .map(|t| {
            let mut keys = Vec::new();
            let mut values = Vec::new();
            for p in causal_window_positions(t, w) {
                if dual_ln {
                    keys.push(ln_row(&k[p], &h.ln_local.0, &h.ln_local.1, eps));
                    values.push(ln_row(&v[p], &h.ln_local.0, &h.ln_local.1, eps));
                } else {
                    keys.push(k[p].clone());
                    values.push(v[p].clone());
                }
            }
            if r > 0 {
                for s in 0..t / l {
                    let range = s * l..(s + 1) * l;
                    let (_, kb, vb) = project(
                        &x[range.clone()].to_vec(),
                        &k[range.clone()].to_vec(),
                        &v[range].to_vec(),
                        &h.wp,
                    );
                    if dual_ln {
                        keys.extend(ln_all(&kb, &h.ln_global, eps));
                        values.extend(ln_all(&vb, &h.ln_global, eps));
                    } else {
                        keys.extend(kb);
                        values.extend(vb);
                    }
                }
            }
            attend_row(&q[t], &keys, &values)
        })
        .collect()
}

pub fn max_diff(a: &Tensor, b: &Mat) -> f64 {
    assert_eq!(a.rows(), b.len(), "row count");
    let mut worst = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        assert_eq!(a.row(i).len(), row.len(), "column count");
        for (x, y) in a.row(i).iter().zip(row) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

pub fn random_x(seed: u64, n: usize, d: usize) -> Tensor {
    Rng::new(seed).normal_matrix(n, d)
}

pub fn random_head(seed: u64, cfg: &LsConfig) -> HeadParams {
    HeadParams::init(&mut Rng::new(seed), cfg, InitScheme::default())
}

/// Same weights with non-trivial LN gains and biases, so the oracle would
/// notice a swapped or skipped normalization.
pub fn random_head_with_ln(seed: u64, cfg: &LsConfig) -> HeadParams {
    let mut p = random_head(seed, cfg);
    let mut rng = Rng::new(seed ^ 0xa5a5);
    let dk = cfg.head_dim();
    p.ln_local.gain = Tensor::from_fn(1, dk, |_, _| rng.uniform(0.5, 1.5));
    p.ln_local.bias = Tensor::from_fn(1, dk, |_, _| rng.uniform(-0.2, 0.2));
    p.ln_global.gain = Tensor::from_fn(1, dk, |_, _| rng.uniform(0.5, 1.5));
    p.ln_global.bias = Tensor::from_fn(1, dk, |_, _| rng.uniform(-0.2, 0.2));
    p
}
