//! Eager tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every op computes its value when recorded; [`Graph::backward`] walks the tape in
//! reverse and returns the gradient of a scalar output with respect to every node.

use std::collections::HashMap;

use fdbeam_core::Scalar;

use crate::params::ParamStore;
use crate::tensor::{matmul, Matrix};

pub type NodeId = usize;

/// An op with a hand-written vector-Jacobian product.
pub trait CustomOp<T: Scalar> {
    /// Gradients for each input given the gradient of the output.
    fn backward(&self, inputs: &[&Matrix<T>], output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Matrix<T>>;
}

enum Op<T: Scalar> {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    Gelu(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Matrix<T>, inv_std: Vec<T> },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, probs: Vec<Matrix<T>> },
    SliceRows(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    Custom { inputs: Vec<NodeId>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Scalar> {
    // `None` for parameters, whose value lives in the store
    value: Option<Matrix<T>>,
    op: Op<T>,
}

pub struct Graph<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<usize, NodeId>,
}

const LN_EPS: f64 = 1e-5;

fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x);
    (y, dy)
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self { store, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        let node = &self.nodes[id];
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => &self.store.values[*p],
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value: Some(value), op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Matrix<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        if let Some(&id) = self.param_nodes.get(&index) {
            return id;
        }
        self.nodes.push(Node { value: None, op: Op::Param(index) });
        let id = self.nodes.len() - 1;
        self.param_nodes.insert(index, id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = matmul(self.value(a), false, self.value(b), false);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// `a + 1·b` with `b` a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bias = self.value(b);
        assert_eq!((1, self.value(a).cols), bias.shape(), "row broadcast shape");
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            v.row_mut(r).iter_mut().zip(&bias.data).for_each(|(x, &b)| *x += b);
        }
        self.push(v, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let mut v = self.value(a).clone();
        v.scale_assign(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let v = Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|&x| gelu(x).0).collect());
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both 1×cols).
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let n = T::from_usize_lossy(cols);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mu = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / n;
            let inv = T::one() / (var + T::lit(LN_EPS)).sqrt();
            xhat.row_mut(r).iter_mut().zip(row).for_each(|(h, &v)| *h = (v - mu) * inv);
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let v = Matrix::from_fn(rows, cols, |r, c| xhat.at(r, c) * g.data[c] + b.data[c]);
        self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Multi-head scaled dot-product attention without masking. `q`: n×d, `k`, `v`: m×d.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.shape();
        let m = kv.rows;
        assert!(d % heads == 0 && kv.cols == d && vv.shape() == (m, d), "attention shapes");
        let dh = d / heads;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let ds = d as isize;
        let mut out = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let off = h * dh;
            let mut s = Matrix::zeros(n, m);
            T::gemm(n, dh, m, scale, &qv.data[off..], (ds, 1), &kv.data[off..], (1, ds), T::zero(), &mut s.data, (m as isize, 1));
            for r in 0..n {
                let row = s.row_mut(r);
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                row.iter_mut().for_each(|x| {
                    *x = (*x - mx).exp();
                    z += *x;
                });
                row.iter_mut().for_each(|x| *x /= z);
            }
            T::gemm(n, m, dh, T::one(), &s.data, (m as isize, 1), &vv.data[off..], (ds, 1), T::zero(), &mut out.data[off..], (ds, 1));
            probs.push(s);
        }
        self.push(out, Op::Attention { q, k, v, heads, probs })
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        assert!(start + len <= x.rows, "row slice out of range");
        let v = Matrix::from_vec(len, x.cols, x.data[start * x.cols..(start + len) * x.cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows;
        assert!(parts.iter().all(|&p| self.value(p).rows == rows), "concat row mismatch");
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                v.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn custom(&mut self, inputs: &[NodeId], value: Matrix<T>, op: Box<dyn CustomOp<T>>) -> NodeId {
        self.push(value, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// Gradients of the 1×1 node `out` with respect to every node (`None` if unreached).
    pub fn backward(&self, out: NodeId) -> Gradients<T> {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out] = Some(Matrix::from_vec(1, 1, vec![T::one()]));

        fn acc<T: Scalar>(grads: &mut [Option<Matrix<T>>], id: NodeId, g: Matrix<T>) {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let ga = matmul(&g, false, self.value(*b), true);
                    let gb = matmul(self.value(*a), true, &g, false);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        gb.data.iter_mut().zip(g.row(r)).for_each(|(s, &x)| *s += x);
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    let mut ga = g.clone();
                    ga.scale_assign(*s);
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let ga = Matrix::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&x.data).map(|(&gi, &xi)| gi * gelu(xi).1).collect(),
                    );
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let (rows, cols) = xhat.shape();
                    let gam = self.value(*gamma);
                    let n = T::from_usize_lossy(cols);
                    let mut gx = Matrix::zeros(rows, cols);
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gbeta = Matrix::zeros(1, cols);
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let (gr, hr) = (g.row(r), xhat.row(r));
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for c in 0..cols {
                            gg.data[c] += gr[c] * hr[c];
                            gbeta.data[c] += gr[c];
                            dxhat[c] = gr[c] * gam.data[c];
                            s1 += dxhat[c];
                            s2 += dxhat[c] * hr[c];
                        }
                        let k = inv_std[r] / n;
                        for (c, out) in gx.row_mut(r).iter_mut().enumerate() {
                            *out = k * (n * dxhat[c] - s1 - hr[c] * s2);
                        }
                    }
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *gamma, gg);
                    acc(&mut grads, *beta, gbeta);
                }
                Op::Attention { q, k, v, heads, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (n, d) = qv.shape();
                    let m = kv.rows;
                    let dh = d / heads;
                    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
                    let ds = d as isize;
                    let ms = m as isize;
                    let mut gq = Matrix::zeros(n, d);
                    let mut gk = Matrix::zeros(m, d);
                    let mut gv = Matrix::zeros(m, d);
                    for (h, p) in probs.iter().enumerate() {
                        let off = h * dh;
                        // dV_h = Pᵀ dO_h
                        T::gemm(m, n, dh, T::one(), &p.data, (1, ms), &g.data[off..], (ds, 1), T::one(), &mut gv.data[off..], (ds, 1));
                        // dP = dO_h V_hᵀ
                        let mut dp = Matrix::zeros(n, m);
                        T::gemm(n, dh, m, T::one(), &g.data[off..], (ds, 1), &vv.data[off..], (1, ds), T::zero(), &mut dp.data, (ms, 1));
                        for r in 0..n {
                            let pr = p.row(r);
                            let dot: T = dp.row(r).iter().zip(pr).map(|(&a, &b)| a * b).sum();
                            dp.row_mut(r).iter_mut().zip(pr).for_each(|(x, &pp)| *x = pp * (*x - dot) * scale);
                        }
                        T::gemm(n, m, dh, T::one(), &dp.data, (ms, 1), &kv.data[off..], (ds, 1), T::one(), &mut gq.data[off..], (ds, 1));
                        T::gemm(m, n, dh, T::one(), &dp.data, (1, ms), &qv.data[off..], (ds, 1), T::one(), &mut gk.data[off..], (ds, 1));
                    }
                    acc(&mut grads, *q, gq);
                    acc(&mut grads, *k, gk);
                    acc(&mut grads, *v, gv);
                }
                Op::SliceRows(a, start) => {
                    let x = self.value(*a);
                    let mut ga = Matrix::zeros(x.rows, x.cols);
                    ga.data[start * x.cols..start * x.cols + g.data.len()].copy_from_slice(&g.data);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let gp = Matrix::from_fn(g.rows, w, |r, c| g.at(r, c0 + c));
                        acc(&mut grads, p, gp);
                        c0 += w;
                    }
                }
                Op::Custom { inputs, op } => {
                    let ins: Vec<&Matrix<T>> = inputs.iter().map(|&i| self.value(i)).collect();
                    let gs = op.backward(&ins, self.value(id), &g);
                    for (&i, gi) in inputs.iter().zip(gs) {
                        acc(&mut grads, i, gi);
                    }
                }
            }
            grads[id] = Some(g);
        }
        Gradients { nodes: grads, params: self.param_nodes.iter().map(|(&p, &n)| (p, n)).collect() }
    }
}

pub struct Gradients<T> {
    nodes: Vec<Option<Matrix<T>>>,
    params: Vec<(usize, NodeId)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn node(&self, id: NodeId) -> Option<&Matrix<T>> {
        self.nodes.get(id).and_then(|g| g.as_ref())
    }

    /// Adds parameter gradients into `out` (indexed like the store).
    pub fn accumulate_params(&self, out: &mut [Matrix<T>]) {
        self.accumulate_params_scaled(out, T::one());
    }

    /// Adds `scale` times the parameter gradients into `out`.
    pub fn accumulate_params_scaled(&self, out: &mut [Matrix<T>], scale: T) {
        for &(p, n) in &self.params {
            if let Some(g) = &self.nodes[n] {
                out[p].data.iter_mut().zip(&g.data).for_each(|(a, &b)| *a += scale * b);
            }
        }
    }
}

/// `x·W + b` for a stored weight `W` (in×out) and bias `b` (1×out).
pub fn linear<T: Scalar>(g: &mut Graph<'_, T>, x: NodeId, w: usize, b: usize) -> NodeId {
    let wn = g.param(w);
    let bn = g.param(b);
    let xw = g.matmul(x, wn);
    g.add_row(xw, bn)
}
