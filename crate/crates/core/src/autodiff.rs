//! Reverse-mode automatic differentiation over 2-D matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamSet`] rather than copied; calling
//! [`Tape::backward`] accumulates their gradients into a [`Grads`] buffer and
//! returns the gradients of every recorded node.

use crate::matrix::Matrix;
use crate::params::{Grads, ParamId, ParamSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

enum Value<'p, T> {
    Owned(Matrix<T>),
    Borrowed(&'p Matrix<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Matrix<T> {
        match self {
            Value::Owned(m) => m,
            Value::Borrowed(m) => m,
        }
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix<T>,
        inv_std: Vec<T>,
    },
    SoftmaxRows(Var),
    Transpose(Var),
    MeanRows(Var),
    SliceCols(Var, usize),
    HCat(Vec<Var>),
    AddScaledConst {
        x: Var,
        s: Var,
        m: Matrix<T>,
    },
    SumSquares(Var),
}

struct Node<'p, T> {
    value: Value<'p, T>,
    op: Op<T>,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<'p, T>>,
}

/// Gradients of every node after a backward sweep.
pub struct NodeGrads<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> NodeGrads<T> {
    pub fn wrt(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        self.nodes[v.0].value.get()
    }

    pub fn input(&mut self, m: Matrix<T>) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(self.params.get(id)),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 × cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let xv = self.value(x);
        let rv = self.value(row);
        assert_eq!(rv.shape(), (1, xv.cols()), "add_row shape");
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(rv.as_slice()) {
                *o = *o + b;
            }
        }
        self.push(out, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.push(out, Op::Gelu(x))
    }

    /// Row-wise layer normalisation with learned `1 × cols` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let n = T::of(cols as f64);
        let eps = T::of(LN_EPS);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().copied().sum::<T>() / n;
            let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (h, &v) in xhat.row_mut(i).iter_mut().zip(r) {
                *h = (v - mean) * is;
            }
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = xhat.clone();
        for i in 0..rows {
            for ((o, &gv), &bv) in out
                .row_mut(i)
                .iter_mut()
                .zip(g.as_slice())
                .zip(b.as_slice())
            {
                *o = *o * gv + bv;
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    /// Mean over rows, giving `1 × cols`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let out = self.value(x).mean_rows();
        self.push(out, Op::MeanRows(x))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_cols(start, len);
        self.push(out, Op::SliceCols(x, start))
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hcat(&mats);
        self.push(out, Op::HCat(parts.to_vec()))
    }

    /// `x + s · m` where `s` is a `1 × 1` node and `m` a constant.
    pub fn add_scaled_const(&mut self, x: Var, s: Var, m: &Matrix<T>) -> Var {
        let sv = self.value(s);
        assert_eq!(sv.shape(), (1, 1), "scale node must be 1x1");
        let sv = sv[(0, 0)];
        let mut out = self.value(x).clone();
        out.scaled_add_assign(sv, m);
        self.push(out, Op::AddScaledConst { x, s, m: m.clone() })
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let v = self.value(x).as_slice().iter().map(|&a| a * a).sum::<T>();
        self.push(Matrix::scalar(v), Op::SumSquares(x))
    }

    /// Propagates `seed` (the gradient of some scalar w.r.t. `output`) back through
    /// the tape. Parameter gradients are added into `param_grads`.
    pub fn backward(
        &self,
        output: Var,
        seed: Matrix<T>,
        param_grads: &mut Grads<T>,
    ) -> NodeGrads<T> {
        assert_eq!(seed.shape(), self.value(output).shape(), "seed shape");
        let mut grads: Vec<Option<Matrix<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => param_grads.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = g.matmul_t(bv);
                    let gb = av.t_matmul(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g.clone());
                }
                Op::AddRow(x, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for r in g.iter_rows() {
                        for (o, &v) in gr.as_mut_slice().iter_mut().zip(r) {
                            *o = *o + v;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *x, g.clone());
                }
                Op::Scale(x, s) => acc(&mut grads, *x, g.scale(*s)),
                Op::Gelu(x) => {
                    let gx = self.value(*x).zip_map(&g, |v, gv| gv * gelu_grad(v));
                    acc(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = self.value(*gamma);
                    let (rows, cols) = g.shape();
                    let n = T::of(cols as f64);
                    let mut ggam = Matrix::zeros(1, cols);
                    let mut gbet = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        let gr = g.row(i);
                        let hr = xhat.row(i);
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..cols {
                            ggam.as_mut_slice()[j] = ggam.as_slice()[j] + gr[j] * hr[j];
                            gbet.as_mut_slice()[j] = gbet.as_slice()[j] + gr[j];
                            let d = gr[j] * gam.as_slice()[j];
                            sum_d = sum_d + d;
                            sum_dh = sum_dh + d * hr[j];
                        }
                        let is = inv_std[i];
                        for j in 0..cols {
                            let d = gr[j] * gam.as_slice()[j];
                            gx[(i, j)] = is * (d - sum_d / n - hr[j] * sum_dh / n);
                        }
                    }
                    acc(&mut grads, *gamma, ggam);
                    acc(&mut grads, *beta, gbet);
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = node.value.get();
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                        for (o, (&yv, &gv)) in gx.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Transpose(x) => acc(&mut grads, *x, g.transpose()),
                Op::MeanRows(x) => {
                    let rows = self.value(*x).rows();
                    let inv = T::one() / T::of(rows as f64);
                    let row: Vec<T> = g.as_slice().iter().map(|&v| v * inv).collect();
                    let gx = Matrix::from_fn(rows, g.cols(), |_, j| row[j]);
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols(x, start) => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::HCat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        acc(&mut grads, p, g.slice_cols(offset, w));
                        offset += w;
                    }
                }
                Op::AddScaledConst { x, s, m } => {
                    let gs = g
                        .as_slice()
                        .iter()
                        .zip(m.as_slice())
                        .map(|(&a, &b)| a * b)
                        .sum::<T>();
                    acc(&mut grads, *s, Matrix::scalar(gs));
                    acc(&mut grads, *x, g.clone());
                }
                Op::SumSquares(x) => {
                    let gv = g[(0, 0)] * T::of(2.0);
                    acc(&mut grads, *x, self.value(*x).scale(gv));
                }
            }
            grads[idx] = Some(g);
        }
        NodeGrads { grads }
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(a) => a.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let max = r.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in r.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_K) * (x + T::of(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0) * c * x * x)
}
