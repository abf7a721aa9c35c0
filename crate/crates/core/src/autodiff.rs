//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of every trainable parameter the scalar depends on. A tape belongs to
//! one forward/backward pair; build a fresh one per evaluation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::params::ParameterStore;
use crate::tensor::{self, BroadcastMap, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Max(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    SumAxis(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Recip(Var),
    Softmax(Var),
    StraightThrough(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients keyed by parameter name, in the order parameters were first used.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    entries: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.entries.into_iter().collect()
    }

    pub(crate) fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Gradients { entries }
    }

    pub fn global_norm(&self) -> f64 {
        math::sqrt(
            self.entries
                .iter()
                .flat_map(|(_, t)| t.data())
                .map(|g| g * g)
                .sum(),
        )
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_lookup: BTreeMap<String, Var>,
    track_params: bool,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    /// A tape that tracks trainable parameters for [`Tape::backward`].
    pub fn new() -> Self {
        Tape {
            track_params: true,
            ..Default::default()
        }
    }

    /// A tape that treats every parameter as a constant (inference only).
    pub fn inference() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Leaf for the named parameter. Trainable entries are tracked for
    /// gradients; frozen ones enter as constants. Repeated lookups of one name
    /// return the same handle.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_lookup.get(name) {
            return Ok(v);
        }
        let entry = store
            .entry(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        let v = self.constant(entry.tensor.clone());
        if self.track_params && entry.trainable {
            self.params.push((name.to_string(), v));
        }
        self.param_lookup.insert(name.to_string(), v);
        Ok(v)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let value = tensor::zip_broadcast(name, self.value(a), self.value(b), f)?;
        self.push(value, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, f64::max, Op::Max(a, b))
    }

    /// `k · a`.
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = tensor::map(self.value(a), |x| k * x);
        self.push(value, Op::Affine(a, k), "scale")
    }

    /// `c − a`.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Result<Var> {
        let k = self.scalar(c);
        self.sub(k, a)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        self.push(value, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = tensor::transpose(self.value(a))?;
        self.push(value, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).with_shape(shape.to_vec())?;
        self.push(value, Op::Reshape(a), "reshape")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = tensor::concat(&refs, axis)?;
        self.push(value, Op::Concat(parts.to_vec(), axis), "concat")
    }

    /// `a[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let value = tensor::slice(self.value(a), axis, start, end)?;
        self.push(value, Op::Slice(a, axis, start), "slice")
    }

    /// Row `i` of a matrix as a `[1 × cols]` matrix.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice(a, 0, i, i + 1)
    }

    /// Columns `start..end` of a matrix.
    pub fn cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let axis = self.value(a).rank().saturating_sub(1);
        self.slice(a, axis, start, end)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let value = tensor::gather_rows(self.value(a), idx)?;
        self.push(value, Op::GatherRows(a, idx.to_vec()), "gather_rows")
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum along `axis`, keeping it as an extent of 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let value = tensor::sum_axis(self.value(a), axis)?;
        self.push(value, Op::SumAxis(a, axis), "sum_axis")
    }

    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let axis = self.value(a).rank().saturating_sub(1);
        self.sum_axis(a, axis)
    }

    pub fn mean_last(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).cols() as f64;
        let s = self.sum_last(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = tensor::map(self.value(a), math::tanh);
        self.push(value, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = tensor::map(self.value(a), math::sigmoid);
        self.push(value, Op::Sigmoid(a), "sigmoid")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = tensor::map(self.value(a), math::exp);
        self.push(value, Op::Exp(a), "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = tensor::map(self.value(a), math::ln);
        self.push(value, Op::Ln(a), "ln")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let value = tensor::map(self.value(a), math::sqrt);
        self.push(value, Op::Sqrt(a), "sqrt")
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let value = tensor::map(self.value(a), |x| 1.0 / x);
        self.push(value, Op::Recip(a), "recip")
    }

    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let value = tensor::softmax_last(self.value(a))?;
        self.push(value, Op::Softmax(a), "softmax")
    }

    /// Forward value `hard`, backward as if the value were `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Result<Var> {
        if hard.shape() != self.value(soft).shape() {
            return Err(mismatch("straight_through", &hard, self.value(soft)));
        }
        self.push(hard, Op::StraightThrough(soft), "straight_through")
    }

    /// `x · W + b` for `x: [n × in]`, `W: [in × out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 || rv.rank() > 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let ga = self.unbroadcast(out, *a, &g);
                    accumulate(&mut grads, *a, ga);
                    let mut gb = self.unbroadcast(out, *b, &g);
                    if sign < 0.0 {
                        gb.iter_mut().for_each(|x| *x = -*x);
                    }
                    accumulate(&mut grads, *b, gb);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ma = BroadcastMap::new(out.shape(), va.shape());
                    let mb = BroadcastMap::new(out.shape(), vb.shape());
                    let mut ga = vec![0.0; va.len()];
                    let mut gb = vec![0.0; vb.len()];
                    for (k, gk) in g.iter().enumerate() {
                        let (ia, ib) = (ma.index(k), mb.index(k));
                        ga[ia] += gk * vb.data()[ib];
                        gb[ib] += gk * va.data()[ia];
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Max(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ma = BroadcastMap::new(out.shape(), va.shape());
                    let mb = BroadcastMap::new(out.shape(), vb.shape());
                    let mut ga = vec![0.0; va.len()];
                    let mut gb = vec![0.0; vb.len()];
                    for (k, gk) in g.iter().enumerate() {
                        let (ia, ib) = (ma.index(k), mb.index(k));
                        if va.data()[ia] >= vb.data()[ib] {
                            ga[ia] += gk;
                        } else {
                            gb[ib] += gk;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Affine(a, k) => {
                    accumulate(&mut grads, *a, g.iter().map(|x| k * x).collect());
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let gt = Tensor::from_parts(out.shape().to_vec(), g);
                    let ga = tensor::matmul(&gt, &tensor::transpose(vb)?)?;
                    let gb = tensor::matmul(&tensor::transpose(va)?, &gt)?;
                    accumulate(&mut grads, *a, ga.into_data());
                    accumulate(&mut grads, *b, gb.into_data());
                }
                Op::Transpose(a) => {
                    let gt = Tensor::from_parts(out.shape().to_vec(), g);
                    accumulate(&mut grads, *a, tensor::transpose(&gt)?.into_data());
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, g),
                Op::Concat(parts, axis) => {
                    let (outer, _, inner) = tensor::axis_split(out.shape(), *axis);
                    let mut pieces: Vec<Vec<f64>> = parts
                        .iter()
                        .map(|p| Vec::with_capacity(self.value(*p).len()))
                        .collect();
                    let mut off = 0;
                    for _ in 0..outer {
                        for (pi, p) in parts.iter().enumerate() {
                            let block = self.value(*p).shape()[*axis] * inner;
                            pieces[pi].extend_from_slice(&g[off..off + block]);
                            off += block;
                        }
                    }
                    for (p, piece) in parts.iter().zip(pieces) {
                        accumulate(&mut grads, *p, piece);
                    }
                }
                Op::Slice(a, axis, start) => {
                    let va = self.value(*a);
                    let (outer, ext, inner) = tensor::axis_split(va.shape(), *axis);
                    let width = out.shape()[*axis] * inner;
                    let mut ga = vec![0.0; va.len()];
                    for o in 0..outer {
                        let dst = (o * ext + start) * inner;
                        ga[dst..dst + width].copy_from_slice(&g[o * width..(o + 1) * width]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let va = self.value(*a);
                    let c = va.cols();
                    let mut ga = vec![0.0; va.len()];
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            ga[src * c + j] += g[r * c + j];
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
                Op::SumAxis(a, axis) => {
                    let va = self.value(*a);
                    let (outer, ext, inner) = tensor::axis_split(va.shape(), *axis);
                    let mut ga = vec![0.0; va.len()];
                    for o in 0..outer {
                        for e in 0..ext {
                            for j in 0..inner {
                                ga[(o * ext + e) * inner + j] = g[o * inner + j];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip(&g, out.data(), |g, y| g * (1.0 - y * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip(&g, out.data(), |g, y| g * y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => {
                    let ga = zip(&g, out.data(), |g, y| g * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Ln(a) => {
                    let ga = zip(&g, self.value(*a).data(), |g, x| g / x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => {
                    let ga = zip(&g, out.data(), |g, y| g / (2.0 * y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Recip(a) => {
                    let ga = zip(&g, out.data(), |g, y| -g * y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let c = out.cols();
                    let mut ga = vec![0.0; g.len()];
                    for ((gr, yr), dst) in g
                        .chunks(c)
                        .zip(out.data().chunks(c))
                        .zip(ga.chunks_mut(c))
                    {
                        let dotp: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((d, g), y) in dst.iter_mut().zip(gr).zip(yr) {
                            *d = y * (g - dotp);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::StraightThrough(soft) => accumulate(&mut grads, *soft, g),
            }
        }

        let entries = self
            .params
            .iter()
            .filter_map(|(name, v)| {
                let g = grads.get_mut(v.0).and_then(Option::take)?;
                let shape = self.value(*v).shape().to_vec();
                Some((name.clone(), Tensor::from_parts(shape, g)))
            })
            .collect();
        Ok(Gradients::from_entries(entries))
    }

    fn unbroadcast(&self, out: &Tensor, input: Var, g: &[f64]) -> Vec<f64> {
        let vin = self.value(input);
        BroadcastMap::new(out.shape(), vin.shape()).reduce(g, vin.len())
    }
}

fn zip(g: &[f64], v: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(v).map(|(&a, &b)| f(a, b)).collect()
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
