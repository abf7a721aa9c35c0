//! Dense row-major `f64` tensors and the value-level kernels the tape builds on.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense real array. `shape` may be empty (a scalar); every extent is positive.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&e| e == 0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Tensor { shape, data })
    }

    /// Caller guarantees the shape/data invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        assert!(shape.iter().all(|&e| e > 0), "tensor extents must be positive");
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::invalid("item() on a tensor with more than one element"))
        }
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Row `i` of a matrix (or the whole vector).
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn with_shape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// How each flat output index maps back to a flat input index under broadcasting.
#[derive(Debug, Clone)]
pub(crate) enum BroadcastMap {
    Same,
    Scalar,
    /// Input repeats every `n` outputs (input shape is a suffix of the output).
    Cycle(usize),
    /// Each input value covers `n` consecutive outputs (trailing axis of 1).
    Repeat(usize),
    Table(Vec<usize>),
}

impl BroadcastMap {
    pub(crate) fn new(out: &[usize], inp: &[usize]) -> Self {
        let out_len: usize = out.iter().product();
        let in_len: usize = inp.iter().product();
        if out == inp {
            return BroadcastMap::Same;
        }
        if in_len == 1 {
            return BroadcastMap::Scalar;
        }
        let pad = out.len() - inp.len();
        if out[pad..] == *inp {
            return BroadcastMap::Cycle(in_len);
        }
        // leading axes match and the remaining input axes are all 1
        let lead = inp.iter().rposition(|&e| e != 1).map_or(0, |p| p + 1);
        if pad == 0 && out[..lead] == inp[..lead] {
            return BroadcastMap::Repeat(out_len / in_len);
        }
        let mut in_strides = vec![0usize; out.len()];
        let mut stride = 1;
        for i in (0..inp.len()).rev() {
            in_strides[i + pad] = if inp[i] == 1 { 0 } else { stride };
            stride *= inp[i];
        }
        let mut table = Vec::with_capacity(out_len);
        let mut idx = vec![0usize; out.len()];
        for _ in 0..out_len {
            table.push(idx.iter().zip(&in_strides).map(|(i, s)| i * s).sum());
            for ax in (0..out.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < out[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        BroadcastMap::Table(table)
    }

    #[inline]
    pub(crate) fn index(&self, i: usize) -> usize {
        match self {
            BroadcastMap::Same => i,
            BroadcastMap::Scalar => 0,
            BroadcastMap::Cycle(n) => i % n,
            BroadcastMap::Repeat(n) => i / n,
            BroadcastMap::Table(t) => t[i],
        }
    }

    /// Sum a gradient laid out in the output shape back onto the input shape.
    pub(crate) fn reduce(&self, grad: &[f64], in_len: usize) -> Vec<f64> {
        if let BroadcastMap::Same = self {
            return grad.to_vec();
        }
        let mut out = vec![0.0; in_len];
        for (i, g) in grad.iter().enumerate() {
            out[self.index(i)] += g;
        }
        out
    }
}

pub(crate) fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let shape = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| Error::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })?;
    let n: usize = shape.iter().product();
    let ma = BroadcastMap::new(&shape, &a.shape);
    let mb = BroadcastMap::new(&shape, &b.shape);
    let data = (0..n)
        .map(|i| f(a.data[ma.index(i)], b.data[mb.index(i)]))
        .collect();
    Ok(Tensor::from_parts(shape, data))
}

pub(crate) fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape.clone(), a.data.iter().map(|&x| f(x)).collect())
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape.as_slice() {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: t.shape.clone(),
            rhs: Vec::new(),
        }),
    }
}

/// `[m×k]·[k×n]`. Every output accumulates over `k` in ascending order, so a row
/// of the product does not depend on how many other rows are computed with it.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = require_matrix("transpose", a)?;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Split a shape around `axis` into (outer, extent, inner) counts.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Sum along `axis`, keeping it as an extent of 1.
pub fn sum_axis(a: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= a.rank() {
        return Err(Error::invalid("sum_axis: axis out of range"));
    }
    let (outer, ext, inner) = axis_split(&a.shape, axis);
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for e in 0..ext {
            let base = (o * ext + e) * inner;
            for i in 0..inner {
                out[o * inner + i] += a.data[base + i];
            }
        }
    }
    let mut shape = a.shape.clone();
    shape[axis] = 1;
    Ok(Tensor::from_parts(shape, out))
}

/// Softmax over the last axis with the row maximum subtracted first.
pub fn softmax_last(a: &Tensor) -> Result<Tensor> {
    if a.rank() == 0 {
        return Err(Error::invalid("softmax over a scalar"));
    }
    let c = a.cols();
    let mut out = a.data.clone();
    for row in out.chunks_mut(c) {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = crate::math::exp(*v - mx);
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(Tensor::from_parts(a.shape.clone(), out))
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
    if axis >= first.rank() {
        return Err(Error::invalid("concat: axis out of range"));
    }
    let mut shape = first.shape.clone();
    shape[axis] = 0;
    for p in parts {
        let same_rank = p.rank() == first.rank();
        let compatible = same_rank
            && p.shape
                .iter()
                .zip(&first.shape)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape.clone(),
                rhs: p.shape.clone(),
            });
        }
        shape[axis] += p.shape[axis];
    }
    let (outer, _, inner) = axis_split(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for p in parts {
            let block = p.shape[axis] * inner;
            data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

pub fn slice(a: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    if axis >= a.rank() || start >= end || end > a.shape[axis] {
        return Err(Error::invalid("slice: range out of bounds"));
    }
    let (outer, ext, inner) = axis_split(&a.shape, axis);
    let mut data = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        data.extend_from_slice(&a.data[(o * ext + start) * inner..(o * ext + end) * inner]);
    }
    let mut shape = a.shape.clone();
    shape[axis] = end - start;
    Ok(Tensor::from_parts(shape, data))
}

/// Rows `idx` of a matrix, stacked.
pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (r, c) = require_matrix("gather_rows", a)?;
    if idx.is_empty() || idx.iter().any(|&i| i >= r) {
        return Err(Error::invalid("gather_rows: index out of range"));
    }
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(&a.data[i * c..(i + 1) * c]);
    }
    Ok(Tensor::from_parts(vec![idx.len(), c], data))
}
