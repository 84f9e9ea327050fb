//! A define-by-run reverse-mode tape over [`Matrix`] values.
//!
//! Values are computed eagerly as nodes are pushed, so a tape doubles as the
//! forward pass. Parameters are borrowed, not copied; [`Tape::backward`]
//! returns gradients keyed by [`ParamId`].

use std::borrow::Cow;
use std::collections::HashMap;

use crate::param::{Gradients, Param, ParamId};
use crate::tensor::{self, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    WeightedSum {
        terms: Vec<Var>,
        weights: Var,
    },
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    DotConst(Var, Matrix),
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<ParamId, Var>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'p, Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant owned by the tape.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Input)
    }

    /// A constant borrowed for the tape's lifetime.
    pub fn input(&mut self, m: &'p Matrix) -> Var {
        self.push(Cow::Borrowed(m), Op::Input)
    }

    /// Binds a parameter; repeated binds of the same parameter share one node.
    pub fn param(&mut self, p: &'p Param) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        let v = self.push(Cow::Borrowed(&p.value), Op::Param(p.id()));
        self.params.insert(p.id(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(Cow::Owned(out), Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(Cow::Owned(out), Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b));
        self.push(Cow::Owned(out), Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a).add_row(self.value(row));
        self.push(Cow::Owned(out), Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a).mul_row(self.value(row));
        self.push(Cow::Owned(out), Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(Cow::Owned(out), Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(tensor::gelu);
        self.push(Cow::Owned(out), Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = tensor::softmax_rows(self.value(a));
        self.push(Cow::Owned(out), Op::SoftmaxRows(a))
    }

    /// Affine-free per-row normalization.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let (out, inv_std) = tensor::layer_norm_rows(self.value(x), tensor::LAYER_NORM_EPS);
        self.push(Cow::Owned(out), Op::LayerNorm { x, inv_std })
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_rows();
        self.push(Cow::Owned(out), Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_cols(&mats);
        self.push(Cow::Owned(out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::concat_rows(&mats);
        self.push(Cow::Owned(out), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice_cols(start, end);
        self.push(Cow::Owned(out), Op::SliceCols(a, start))
    }

    /// `Σ_i weights[0,i] · terms[i]`, with `weights` a `1 × n` row.
    pub fn weighted_sum(&mut self, terms: &[Var], weights: Var) -> Var {
        let w = self.value(weights);
        assert_eq!(w.shape(), (1, terms.len()), "weight row length mismatch");
        let mats: Vec<&Matrix> = terms.iter().map(|&t| self.value(t)).collect();
        let out = tensor::weighted_sum(w.as_slice(), &mats);
        self.push(
            Cow::Owned(out),
            Op::WeightedSum {
                terms: terms.to_vec(),
                weights,
            },
        )
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`; `logits` is `1 × K`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows(), 1, "cross_entropy expects a single row of logits");
        assert!(target < l.cols(), "target class out of range");
        let probs = tensor::softmax(l.as_slice());
        let loss = -probs[target].max(f64::MIN_POSITIVE).ln();
        self.push(
            Cow::Owned(Matrix::from_vec(1, 1, vec![loss])),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        )
    }

    /// `Σ a ⊙ weights` as a `1 × 1` scalar.
    pub fn dot_const(&mut self, a: Var, weights: Matrix) -> Var {
        let s = tensor::dot(self.value(a).as_slice(), weights.as_slice());
        self.push(
            Cow::Owned(Matrix::from_vec(1, 1, vec![s])),
            Op::DotConst(a, weights),
        )
    }

    /// Back-propagates from the `1 × 1` node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        let mut out = Gradients::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.insert(*id, g),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(*a, g.matmul_t(bv));
                    acc(*b, av.t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    acc(*a, g.matmul(bv));
                    acc(*b, g.t_matmul(av));
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_rows());
                    acc(*a, g);
                }
                Op::MulRow(a, row) => {
                    let av = self.value(*a);
                    let rv = self.value(*row);
                    acc(*row, g.zip_map(av, |x, y| x * y).sum_rows());
                    acc(*a, g.mul_row(rv));
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s)),
                Op::Gelu(a) => {
                    let av = self.value(*a);
                    acc(*a, g.zip_map(av, |d, x| d * tensor::gelu_grad(x)));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = tensor::dot(yr, gr);
                        for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - inner);
                        }
                    }
                    acc(*a, d);
                }
                Op::LayerNorm { x, inv_std } => {
                    let xhat = &node.value;
                    let n = xhat.cols() as f64;
                    let mut d = Matrix::zeros(xhat.rows(), xhat.cols());
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let xr = xhat.row(r);
                        let gr = g.row(r);
                        let sum_g: f64 = gr.iter().sum();
                        let sum_gx = tensor::dot(gr, xr);
                        for ((o, &xv), &gv) in d.row_mut(r).iter_mut().zip(xr).zip(gr) {
                            *o = inv / n * (n * gv - sum_g - xv * sum_gx);
                        }
                    }
                    acc(*x, d);
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).rows();
                    let row = g.scale(1.0 / rows as f64);
                    let d = Matrix::from_fn(rows, row.cols(), |_, c| row.get(0, c));
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        acc(p, g.slice_cols(start, start + w));
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let pv = self.value(p);
                        let (r, c) = pv.shape();
                        let slab = g.as_slice()[start * c..(start + r) * c].to_vec();
                        acc(p, Matrix::from_vec(r, c, slab));
                        start += r;
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut d = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(*a, d);
                }
                Op::WeightedSum { terms, weights } => {
                    let w = self.value(*weights);
                    let mut dw = Matrix::zeros(1, terms.len());
                    for (i, &t) in terms.iter().enumerate() {
                        let tv = self.value(t);
                        dw.set(0, i, tensor::dot(g.as_slice(), tv.as_slice()));
                        acc(t, g.scale(w.get(0, i)));
                    }
                    acc(*weights, dw);
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let up = g.get(0, 0);
                    let mut d = Matrix::row_vector(probs.clone());
                    d.set(0, *target, d.get(0, *target) - 1.0);
                    acc(*logits, d.scale(up));
                }
                Op::DotConst(a, weights) => acc(*a, weights.scale(g.get(0, 0))),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{Init, ParamBuilder, ParamGroup};

    /// Central-difference check of a scalar function of one parameter.
    fn check(p: &mut Param, f: impl Fn(&Param) -> (f64, Gradients)) {
        let (_, grads) = f(p);
        let analytic = grads.get(p.id()).cloned().unwrap_or_else(|| {
            Matrix::zeros(p.value.rows(), p.value.cols())
        });
        let h = 1e-6;
        for i in 0..p.value.len() {
            let orig = p.value.as_slice()[i];
            p.value.as_mut_slice()[i] = orig + h;
            let up = f(p).0;
            p.value.as_mut_slice()[i] = orig - h;
            let down = f(p).0;
            p.value.as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic.as_slice()[i];
            assert!(
                (fd - a).abs() <= 1e-6 * (1.0 + fd.abs()),
                "element {i}: fd {fd} vs analytic {a}"
            );
        }
    }

    fn scalar_run(mut build: impl FnMut(&mut Tape, Var) -> Var, p: &Param) -> (f64, Gradients) {
        let mut tape = Tape::new();
        let x = tape.param(p);
        let out = build(&mut tape, x);
        let w = Matrix::from_fn(tape.value(out).rows(), tape.value(out).cols(), |r, c| {
            0.3 + 0.17 * r as f64 - 0.11 * c as f64
        });
        let loss = tape.dot_const(out, w);
        (tape.value(loss).get(0, 0), tape.backward(loss))
    }

    fn param(rows: usize, cols: usize) -> Param {
        ParamBuilder::new(11).param("p", ParamGroup::Block, rows, cols, Init::Normal(1.0))
    }

    #[test]
    fn softmax_layernorm_gelu_chain() {
        let mut p = param(3, 4);
        check(&mut p, |p| {
            scalar_run(
                |t, x| {
                    let n = t.layer_norm(x);
                    let g = t.gelu(n);
                    t.softmax_rows(g)
                },
                p,
            )
        });
    }

    #[test]
    fn attention_like_chain() {
        let mut p = param(3, 4);
        let other = Matrix::from_fn(4, 2, |r, c| (r as f64 - c as f64) * 0.3);
        check(&mut p, |p| {
            scalar_run(
                |t, x| {
                    let k = t.constant(other.clone());
                    let q = t.matmul(x, k);
                    let s = t.matmul_t(q, q);
                    let a = t.softmax_rows(s);
                    let h = t.slice_cols(x, 1, 3);
                    let v = t.matmul(a, h);
                    let m = t.mean_rows(v);
                    let c = t.concat_cols(&[m, m]);
                    t.scale(c, 0.7)
                },
                p,
            )
        });
    }

    #[test]
    fn weighted_sum_and_cross_entropy() {
        let mut p = param(1, 3);
        let terms = [
            Matrix::from_fn(2, 3, |r, c| (r + c) as f64 * 0.5),
            Matrix::from_fn(2, 3, |r, c| (r as f64) - (c as f64)),
            Matrix::from_fn(2, 3, |r, c| ((r * 3 + c) as f64).sin()),
        ];
        check(&mut p, |p| {
            let mut tape = Tape::new();
            let x = tape.param(p);
            let w = tape.softmax_rows(x);
            let ts: Vec<Var> = terms.iter().map(|m| tape.input(m)).collect();
            let s = tape.weighted_sum(&ts, w);
            let pooled = tape.mean_rows(s);
            let loss = tape.cross_entropy(pooled, 1);
            (tape.value(loss).get(0, 0), tape.backward(loss))
        });
    }

    #[test]
    fn row_broadcasts_and_concat_rows() {
        let mut p = param(1, 3);
        let base = Matrix::from_fn(2, 3, |r, c| 0.2 * r as f64 + 0.1 * c as f64 - 0.3);
        check(&mut p, |p| {
            scalar_run(
                |t, x| {
                    let b = t.constant(base.clone());
                    let m = t.mul_row(b, x);
                    let a = t.add_row(m, x);
                    let both = t.concat_rows(&[a, x]);
                    t.add(both, both)
                },
                p,
            )
        });
    }

    #[test]
    fn shared_param_binds_once() {
        let p = param(2, 2);
        let mut tape = Tape::new();
        let a = tape.param(&p);
        let b = tape.param(&p);
        assert_eq!(a, b);
        let s = tape.add(a, b);
        let loss = tape.dot_const(s, Matrix::filled(2, 2, 1.0));
        let g = tape.backward(loss);
        assert_eq!(g.get(p.id()).unwrap().as_slice(), &[2.0; 4]);
    }
}
