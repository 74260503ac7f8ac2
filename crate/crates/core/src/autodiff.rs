//! Reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied through the [`Ops`] interface in
//! execution order, so node inputs always precede the node and the record is
//! acyclic. [`Tape::backward`] walks it in reverse.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::ops::{cross_entropy_forward, Ops};
use crate::rng::Rng;
use crate::tensor::{Mask, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Scale(Var, f64),
    Add(Var, Var),
    MulConst(Var, Tensor),
    AddRow(Var, Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an input or parameter.
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var(nodes.len() - 1)
    }

    /// Propagates `seed` (the gradient of some downstream scalar with respect
    /// to `output`) back to every recorded node.
    ///
    /// Leaves that do not influence `output` receive zero gradients.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} for output {:?}", seed.shape(), out_shape),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.0] = Some(seed.clone());

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let val = |v: Var| -> &Tensor { &nodes[v.0].value };
            let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul_t(val(*b))?);
                    acc(*b, val(*a).transpose()?.matmul(&g)?);
                }
                Op::MatMulT(a, b) => {
                    acc(*a, g.matmul(val(*b))?);
                    acc(*b, g.transpose()?.matmul(val(*a))?);
                }
                Op::Transpose(a) => acc(*a, g.transpose()?),
                Op::Scale(a, s) => acc(*a, g.scale(*s)),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::MulConst(a, c) => acc(*a, g.mul(c)?),
                Op::AddRow(a, bias) => {
                    let db = g.sum_rows();
                    let db = Tensor::new(val(*bias).shape().to_vec(), db.into_data())?;
                    acc(*a, g);
                    acc(*bias, db);
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    let mut dx = g;
                    for (d, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
                        if xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    acc(*a, dx);
                }
                Op::Softmax(a) => acc(*a, softmax_backward(&node.value, &g)),
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (dx, dg, db) = layer_norm_backward(&g, xhat, inv_std, val(*gain))?;
                    acc(*x, dx);
                    acc(*gain, Tensor::new(val(*gain).shape().to_vec(), dg)?);
                    acc(*bias, Tensor::new(val(*bias).shape().to_vec(), db)?);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = val(*p).rows();
                        acc(*p, g.slice_rows(start, start + rows)?);
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = val(*p).cols();
                        acc(*p, g.slice_cols(start, start + cols)?);
                        start += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut dx = Tensor::try_zeros(val(*a).shape().to_vec())?;
                    let c = g.cols();
                    dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(*a, dx);
                }
                Op::GatherRows(a, index) => {
                    let mut dx = Tensor::try_zeros(val(*a).shape().to_vec())?;
                    for (k, ix) in index.iter().enumerate() {
                        if let Some(r) = *ix {
                            for (d, s) in dx.row_mut(r).iter_mut().zip(g.row(k)) {
                                *d += s;
                            }
                        }
                    }
                    acc(*a, dx);
                }
                Op::SumAll(a) => {
                    let s = g.data()[0];
                    acc(*a, Tensor::filled(val(*a).shape().to_vec(), s));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = g.data()[0] / targets.len() as f64;
                    let mut dl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        dl.row_mut(r)[t] -= 1.0;
                    }
                    acc(*logits, dl.scale(s));
                }
            }
        }

        for (i, slot) in grads.iter_mut().enumerate() {
            if slot.is_none() && matches!(nodes[i].op, Op::Leaf) {
                *slot = Some(Tensor::zeros(nodes[i].value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }
}

fn softmax_backward(p: &Tensor, g: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(p.shape().to_vec());
    for i in 0..p.rows() {
        let (pr, gr) = (p.row(i), g.row(i));
        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &pv), &gv) in dx.row_mut(i).iter_mut().zip(pr).zip(gr) {
            *d = pv * (gv - dot);
        }
    }
    dx
}

fn layer_norm_backward(
    g: &Tensor,
    xhat: &Tensor,
    inv_std: &[f64],
    gain: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let d = g.cols();
    let n = d as f64;
    let mut dx = Tensor::try_zeros(g.shape().to_vec())?;
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for i in 0..g.rows() {
        let (gr, hr) = (g.row(i), xhat.row(i));
        for j in 0..d {
            dgain[j] += gr[j] * hr[j];
            dbias[j] += gr[j];
            dxhat[j] = gr[j] * gain.data()[j];
        }
        let sum: f64 = dxhat.iter().sum();
        let sum_h: f64 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum();
        let inv = inv_std[i];
        for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
            *out = inv / n * (n * dxhat[j] - sum - hr[j] * sum_h);
        }
    }
    Ok((dx, dgain, dbias))
}

/// Gradients indexed by tape variable.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a leaf; zero when the leaf did not influence the output.
    pub fn wrt(&self, v: Var) -> &Tensor {
        self.get(v)
            .expect("gradient requested for a non-leaf or unrelated variable")
    }
}

impl Ops for Tape {
    type T = Var;

    fn constant(&self, t: Tensor) -> Var {
        self.leaf(t)
    }

    fn shape(&self, x: &Var) -> Vec<usize> {
        self.nodes.borrow()[x.0].value.shape().to_vec()
    }

    fn value(&self, x: &Var) -> Tensor {
        (*self.get(*x)).clone()
    }

    fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.get(*a).matmul(&self.get(*b))?;
        Ok(self.push(v, Op::MatMul(*a, *b)))
    }

    fn matmul_t(&self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.get(*a).matmul_t(&self.get(*b))?;
        Ok(self.push(v, Op::MatMulT(*a, *b)))
    }

    fn transpose(&self, a: &Var) -> Result<Var> {
        let v = self.get(*a).transpose()?;
        Ok(self.push(v, Op::Transpose(*a)))
    }

    fn scale(&self, a: &Var, s: f64) -> Result<Var> {
        let v = self.get(*a).scale(s);
        Ok(self.push(v, Op::Scale(*a, s)))
    }

    fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        let v = self.get(*a).add(&self.get(*b))?;
        Ok(self.push(v, Op::Add(*a, *b)))
    }

    fn mul_const(&self, a: &Var, c: &Tensor) -> Result<Var> {
        let v = self.get(*a).mul(c)?;
        Ok(self.push(v, Op::MulConst(*a, c.clone())))
    }

    fn add_row(&self, a: &Var, bias: &Var) -> Result<Var> {
        let v = self.get(*a).add_row(&self.get(*bias))?;
        Ok(self.push(v, Op::AddRow(*a, *bias)))
    }

    fn relu(&self, a: &Var) -> Result<Var> {
        let v = self.get(*a).map(|x| x.max(0.0));
        Ok(self.push(v, Op::Relu(*a)))
    }

    fn masked_softmax(&self, a: &Var, mask: &Mask) -> Result<Var> {
        let v = self.get(*a).masked_softmax(mask)?;
        Ok(self.push(v, Op::Softmax(*a)))
    }

    fn layer_norm(&self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        let (v, xhat, inv_std) =
            self.get(*x)
                .layer_norm_with_stats(&self.get(*gain), &self.get(*bias), eps)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x: *x,
                gain: *gain,
                bias: *bias,
                xhat,
                inv_std,
            },
        ))
    }

    fn concat_rows(&self, parts: &[&Var]) -> Result<Var> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|v| self.get(**v)).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat_rows(&refs)?;
        Ok(self.push(v, Op::ConcatRows(parts.iter().map(|v| **v).collect())))
    }

    fn concat_cols(&self, parts: &[&Var]) -> Result<Var> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|v| self.get(**v)).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let v = Tensor::concat_cols(&refs)?;
        Ok(self.push(v, Op::ConcatCols(parts.iter().map(|v| **v).collect())))
    }

    fn slice_rows(&self, a: &Var, start: usize, end: usize) -> Result<Var> {
        let v = self.get(*a).slice_rows(start, end)?;
        Ok(self.push(v, Op::SliceRows(*a, start)))
    }

    fn gather_rows(&self, a: &Var, index: &[Option<usize>]) -> Result<Var> {
        let v = self.get(*a).gather_rows(index)?;
        Ok(self.push(v, Op::GatherRows(*a, index.to_vec())))
    }

    fn sum_all(&self, a: &Var) -> Result<Var> {
        let v = Tensor::scalar(self.get(*a).sum());
        Ok(self.push(v, Op::SumAll(*a)))
    }

    fn cross_entropy(&self, logits: &Var, targets: &[usize]) -> Result<Var> {
        let (loss, probs) = cross_entropy_forward(&self.get(*logits), targets)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: *logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// `(parameter index, flat coordinate)` of the worst disagreement.
    pub worst: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Default number of coordinates compared when the parameters have more.
pub const DEFAULT_CHECK_COORDS: usize = 256;

/// Compares the tape gradient of the scalar built by `f` with central finite
/// differences `(f(θ+εe) − f(θ−εe)) / 2ε`.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(f, params, step, DEFAULT_CHECK_COORDS)
}

pub fn finite_diff_check_with<F>(
    f: F,
    params: &[Tensor],
    step: f64,
    max_coords: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&step) {
        return Err(Error::config(format!(
            "finite-difference step {step} outside [1e-7, 1e-4]"
        )));
    }
    if max_coords < 200 {
        return Err(Error::config("at least 200 coordinates must be checked"));
    }

    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&tape, &vars)?;
    if tape.get(out).len() != 1 {
        return Err(Error::shape(
            "finite_diff_check",
            "objective must be scalar",
        ));
    }
    let grads = tape.backward(out, &Tensor::scalar(1.0))?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v).clone()).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = tape.get(out).data()[0];
        Ok(v)
    };

    let mut coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.len()).map(move |c| (pi, c)))
        .collect();
    if coords.len() > max_coords {
        // Deterministic subsample via a partial Fisher-Yates shuffle.
        let mut rng = Rng::new(0x5eed);
        for i in 0..max_coords {
            let j = i + rng.below(coords.len() - i);
            coords.swap(i, j);
        }
        coords.truncate(max_coords);
        coords.sort_unstable();
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: coords.len(),
        worst: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, c) in coords {
        let orig = work[pi].data()[c];
        work[pi].data_mut()[c] = orig + step;
        let plus = eval(&work)?;
        work[pi].data_mut()[c] = orig - step;
        let minus = eval(&work)?;
        work[pi].data_mut()[c] = orig;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[pi].data()[c];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if !rel.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient check at param {pi}, coord {c}"
            )));
        }
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (pi, c);
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
