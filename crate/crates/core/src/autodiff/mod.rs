//! Minimal reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation eagerly: values are computed as nodes
//! are added, and [`Graph::backward`] walks the tape in reverse to produce
//! gradients. Parameters are pulled from a [`ParamStore`] the first time they
//! are used and appear as leaves; constants never receive gradients and
//! operations whose inputs are all constant skip gradient bookkeeping.

pub mod counter;

use ndarray::{s, Axis, Zip};

use crate::params::{ParamId, ParamStore};
use crate::tensor::{Mat, Scalar};

pub use counter::AttnKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MulRow(Var, Var),
    LayerNorm { x: Var, xhat: Mat<T>, inv_std: Vec<T> },
    Gelu(Var),
    Silu(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<Mat<T>> },
    ConcatCols(Vec<Var>),
    SumSquares(Var),
    BceLogits { logits: Var, targets: Vec<T>, weights: Vec<T> },
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of eagerly evaluated tensor operations.
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<T>>,
    store: Option<&'p ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
    params_need_grad: bool,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads[v.0].as_ref()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self { nodes: Vec::new(), store: Some(store), param_vars: vec![None; store.len()], params_need_grad: true }
    }

    /// Forward-only graph: parameters enter as constants, so no backward
    /// bookkeeping (such as attention probabilities) is retained.
    pub fn inference(store: &'p ParamStore<T>) -> Self {
        Self { params_need_grad: false, ..Self::new(store) }
    }

    /// Graph without a parameter store; only constants can be introduced.
    pub fn detached() -> Self {
        Self { nodes: Vec::new(), store: None, param_vars: Vec::new(), params_need_grad: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "not a scalar node");
        m[[0, 0]]
    }

    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients without being a stored parameter.
    pub fn variable(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let v = self.push(store.get(id).clone(), Op::Leaf, self.params_need_grad);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `x W + b` with `W: in x out` and `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let mut value = self.value(x).dot(self.value(w));
        if let Some(b) = b {
            value += &self.value(b).row(0);
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(value, Op::Linear { x, w, b }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a) * s;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    /// Adds a `1 x C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) + &self.value(row).row(0);
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1 x C` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) * &self.value(row).row(0);
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::MulRow(a, row), ng)
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.dim();
        let cf = T::of(c as f64);
        let mut xhat = Mat::zeros((n, c));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (o, &v) in xhat.row_mut(i).iter_mut().zip(row.iter()) {
                *o = (v - mean) * inv;
            }
        }
        if !self.ng(x) {
            return self.push(xhat, Op::Leaf, false);
        }
        let value = xhat.clone();
        self.push(value, Op::LayerNorm { x, xhat, inv_std }, true)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let c = T::of(GELU_C);
        let a = T::of(GELU_A);
        let half = T::of(0.5);
        let value = self.value(x).mapv(|v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()));
        let ng = self.ng(x);
        self.push(value, Op::Gelu(x), ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v * sigmoid(v));
        let ng = self.ng(x);
        self.push(value, Op::Silu(x), ng)
    }

    /// Multi-head scaled dot-product attention. `q: Mq x C`, `k, v: Mk x C`;
    /// heads split the channel dimension into contiguous blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, kind: AttnKind) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (mq, c) = qv.dim();
        let mk = kv.nrows();
        assert_eq!(kv.ncols(), c, "attention: key width mismatch");
        assert_eq!(vv.dim(), (mk, c), "attention: value shape mismatch");
        assert!(heads > 0 && c % heads == 0, "attention: width {c} not divisible by {heads} heads");
        assert!(mk > 0, "attention: empty key set");
        let d = c / heads;
        let scale = T::one() / T::of(d as f64).sqrt();
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        let mut out = Mat::zeros((mq, c));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * d..(h + 1) * d];
            let mut p = qv.slice(cols).dot(&kv.slice(cols).t());
            for mut row in p.rows_mut() {
                let mut mx = T::neg_infinity();
                for &x in row.iter() {
                    mx = mx.max(x * scale);
                }
                let mut sum = T::zero();
                for x in row.iter_mut() {
                    *x = (*x * scale - mx).exp();
                    sum += *x;
                }
                let inv = T::one() / sum;
                row.mapv_inplace(|x| x * inv);
            }
            out.slice_mut(cols).assign(&p.dot(&vv.slice(cols)));
            if ng {
                probs.push(p);
            }
        }
        counter::record(kind, (mq * mk * heads) as u64);
        self.push(out, Op::Attention { q, k, v, heads, probs }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).nrows();
        let total: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut value = Mat::zeros((n, total));
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.nrows(), n, "concat_cols: row mismatch");
            value.slice_mut(s![.., off..off + pv.ncols()]).assign(pv);
            off += pv.ncols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Sum of squared entries as a `1 x 1` node.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().map(|&v| v * v).sum::<T>();
        let ng = self.ng(x);
        self.push(Mat::from_elem((1, 1), s), Op::SumSquares(x), ng)
    }

    /// `sum_i w_i * BCE(sigmoid(logit_i), y_i)` for an `N x 1` logit column,
    /// evaluated in the log-sum-exp stable form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<T>, weights: Vec<T>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.ncols(), 1, "bce: logits must be a column");
        assert_eq!(lv.nrows(), targets.len());
        assert_eq!(lv.nrows(), weights.len());
        let mut total = T::zero();
        for ((&x, &y), &w) in lv.iter().zip(&targets).zip(&weights) {
            total += w * bce_term(x, y);
        }
        let ng = self.ng(logits);
        self.push(Mat::from_elem((1, 1), total), Op::BceLogits { logits, targets, weights }, ng)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Linear { x, w, b } => {
                if self.ng(*x) {
                    self.acc(grads, *x, g.dot(&self.value(*w).t()));
                }
                if self.ng(*w) {
                    self.acc(grads, *w, self.value(*x).t().dot(g));
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        self.acc(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*b) {
                    self.acc(grads, *b, g.mapv(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.acc(grads, *a, g * self.value(*b));
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g * *s),
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                if self.ng(*row) {
                    self.acc(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                let rv = self.value(*row);
                if self.ng(*a) {
                    self.acc(grads, *a, g * &rv.row(0));
                }
                if self.ng(*row) {
                    let prod = g * self.value(*a);
                    self.acc(grads, *row, prod.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let (n, c) = xhat.dim();
                let cf = T::of(c as f64);
                let mut dx = Mat::zeros((n, c));
                for i in 0..n {
                    let gr = g.row(i);
                    let xr = xhat.row(i);
                    let sum_g = gr.iter().copied().sum::<T>();
                    let sum_gx = gr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum::<T>();
                    let inv = inv_std[i];
                    for j in 0..c {
                        dx[[i, j]] = inv / cf * (cf * gr[j] - sum_g - xr[j] * sum_gx);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let c = T::of(GELU_C);
                let a = T::of(GELU_A);
                let half = T::of(0.5);
                let three = T::of(3.0);
                let mut dx = self.value(*x).clone();
                Zip::from(&mut dx).and(g).for_each(|d, &gv| {
                    let v = *d;
                    let t = (c * (v + a * v * v * v)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three * a * v * v);
                    *d = gv * (half * (T::one() + t) + half * v * dt);
                });
                self.acc(grads, *x, dx);
            }
            Op::Silu(x) => {
                let mut dx = self.value(*x).clone();
                Zip::from(&mut dx).and(g).for_each(|d, &gv| {
                    let v = *d;
                    let s = sigmoid(v);
                    *d = gv * s * (T::one() + v * (T::one() - s));
                });
                self.acc(grads, *x, dx);
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let c = qv.ncols();
                let d = c / heads;
                let scale = T::one() / T::of(d as f64).sqrt();
                let mut dq = Mat::zeros(qv.raw_dim());
                let mut dk = Mat::zeros(kv.raw_dim());
                let mut dv = Mat::zeros(vv.raw_dim());
                for (h, p) in probs.iter().enumerate() {
                    let cols = s![.., h * d..(h + 1) * d];
                    let go = g.slice(cols);
                    if self.ng(*v) {
                        dv.slice_mut(cols).assign(&p.t().dot(&go));
                    }
                    if !(self.ng(*q) || self.ng(*k)) {
                        continue;
                    }
                    let mut ds = go.dot(&vv.slice(cols).t());
                    for (mut dsr, pr) in ds.rows_mut().into_iter().zip(p.rows()) {
                        let dot = dsr.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum::<T>();
                        Zip::from(&mut dsr).and(&pr).for_each(|x, &pv| *x = pv * (*x - dot) * scale);
                    }
                    if self.ng(*q) {
                        dq.slice_mut(cols).assign(&ds.dot(&kv.slice(cols)));
                    }
                    if self.ng(*k) {
                        dk.slice_mut(cols).assign(&ds.t().dot(&qv.slice(cols)));
                    }
                }
                self.acc(grads, *q, dq);
                self.acc(grads, *k, dk);
                self.acc(grads, *v, dv);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if self.ng(p) {
                        self.acc(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::SumSquares(x) => {
                let s = g[[0, 0]] * T::of(2.0);
                self.acc(grads, *x, self.value(*x) * s);
            }
            Op::BceLogits { logits, targets, weights } => {
                let gs = g[[0, 0]];
                let lv = self.value(*logits);
                let mut dx = Mat::zeros(lv.raw_dim());
                for (i, &x) in lv.iter().enumerate() {
                    dx[[i, 0]] = gs * weights[i] * (sigmoid(x) - targets[i]);
                }
                self.acc(grads, *logits, dx);
            }
        }
    }

    /// Gradients of every stored parameter, zero-filled where a parameter was
    /// not used by the graph.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Mat<T>> {
        let store = self.store.expect("graph has no parameter store");
        store
            .ids()
            .map(|id| match self.param_vars[id.0].and_then(|v| grads.get(v)) {
                Some(g) => g.clone(),
                None => Mat::zeros(store.get(id).raw_dim()),
            })
            .collect()
    }
}

/// Numerically stable `BCE(sigmoid(x), y) = max(x,0) - x y + ln(1 + e^-|x|)`.
pub fn bce_term<T: Scalar>(x: T, y: T) -> T {
    x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p()
}
