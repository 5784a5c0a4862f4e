//! Forward operations and their backward rules.
//!
//! Shapes are validated up front and every error names the op and the
//! offending shapes. Outputs are checked for finiteness on creation.

use std::rc::Rc;

use super::{numel, GraphInner, Record, Tensor, TensorError};
use crate::scalar::{sigmoid, Scalar};

/// Recorded operation with the node ids needed to replay it backward.
pub(crate) enum Op<T> {
    Matmul { lhs: usize, rhs: usize },
    Bmm { lhs: usize, rhs: usize },
    Add { lhs: usize, rhs: usize },
    AddBias { lhs: usize, bias: usize },
    Sub { lhs: usize, rhs: usize },
    Mul { lhs: usize, rhs: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Sigmoid { input: usize },
    Tanh { input: usize },
    Relu { input: usize },
    Abs { input: usize },
    Softmax { input: usize, axis: usize },
    Transpose { input: usize, a: usize, b: usize },
    Scale { input: usize, factor: T },
    Sum { input: usize },
    Mean { input: usize },
    SliceLead { input: usize, start: usize },
    Reshape { input: usize },
    MixWeights { embed: usize, weights: usize },
    NodeMatmul { vecs: usize, mats: usize },
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn check_same_graph<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(), TensorError> {
    if a.graph.same_graph(&b.graph) {
        Ok(())
    } else {
        Err(TensorError::GraphMismatch { op })
    }
}

impl<T: Scalar> Tensor<T> {
    /// Contraction of the last axis with a 2-D matrix: `(.., k) x (k, m) -> (.., m)`.
    ///
    /// The left operand may carry any number of leading axes; the right
    /// operand must be a matrix.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        check_same_graph("matmul", self, rhs)?;
        let ls = self.shape();
        let rs = rhs.shape();
        if ls.is_empty() || rs.len() != 2 || ls[ls.len() - 1] != rs[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ls,
                rhs: rs,
            });
        }
        let k = rs[0];
        let m = rs[1];
        let rows = numel(&ls) / k;
        let lv = self.values_rc();
        let rv = rhs.values_rc();
        let mut out = vec![T::ZERO; rows * m];
        matmul_into(&lv, &rv, rows, k, m, &mut out);
        let mut out_shape = ls[..ls.len() - 1].to_vec();
        out_shape.push(m);
        let record = (self.requires_grad() || rhs.requires_grad()).then_some(Op::Matmul {
            lhs: self.id,
            rhs: rhs.id,
        });
        self.graph.push("matmul", out_shape, out, record)
    }

    /// Batched matrix product: `(b, m, k) x (b, k, n) -> (b, m, n)`.
    pub fn bmm(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        check_same_graph("bmm", self, rhs)?;
        let ls = self.shape();
        let rs = rhs.shape();
        if ls.len() != 3 || rs.len() != 3 || ls[0] != rs[0] || ls[2] != rs[1] {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                lhs: ls,
                rhs: rs,
            });
        }
        let (b, m, k, n) = (ls[0], ls[1], ls[2], rs[2]);
        let lv = self.values_rc();
        let rv = rhs.values_rc();
        let mut out = vec![T::ZERO; b * m * n];
        for i in 0..b {
            matmul_into(
                &lv[i * m * k..(i + 1) * m * k],
                &rv[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let record = (self.requires_grad() || rhs.requires_grad()).then_some(Op::Bmm {
            lhs: self.id,
            rhs: rhs.id,
        });
        self.graph.push("bmm", vec![b, m, n], out, record)
    }

    /// Elementwise sum of two tensors with identical shapes.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.zip("add", rhs, |a, b| a + b, |l, r| Op::Add { lhs: l, rhs: r })
    }

    /// Elementwise difference of two tensors with identical shapes.
    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.zip("sub", rhs, |a, b| a - b, |l, r| Op::Sub { lhs: l, rhs: r })
    }

    /// Hadamard product of two tensors with identical shapes.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.zip("mul", rhs, |a, b| a * b, |l, r| Op::Mul { lhs: l, rhs: r })
    }

    /// Add a vector over the last axis, broadcast across all leading axes.
    ///
    /// This is the single sanctioned implicit broadcast (bias terms).
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        check_same_graph("add_bias", self, bias)?;
        let ls = self.shape();
        let bs = bias.shape();
        if ls.is_empty() || bs.len() != 1 || bs[0] != ls[ls.len() - 1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: ls,
                rhs: bs,
            });
        }
        let m = bs[0];
        let lv = self.values_rc();
        let bv = bias.values_rc();
        let out: Vec<T> = lv.iter().enumerate().map(|(i, &v)| v + bv[i % m]).collect();
        let record = (self.requires_grad() || bias.requires_grad()).then_some(Op::AddBias {
            lhs: self.id,
            bias: bias.id,
        });
        self.graph.push("add_bias", ls, out, record)
    }

    fn zip(
        &self,
        op: &'static str,
        rhs: &Tensor<T>,
        f: impl Fn(T, T) -> T,
        rec: impl Fn(usize, usize) -> Op<T>,
    ) -> Result<Tensor<T>, TensorError> {
        check_same_graph(op, self, rhs)?;
        let ls = self.shape();
        let rs = rhs.shape();
        if ls != rs {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: ls,
                rhs: rs,
            });
        }
        let lv = self.values_rc();
        let rv = rhs.values_rc();
        let out: Vec<T> = lv.iter().zip(rv.iter()).map(|(&a, &b)| f(a, b)).collect();
        let record = (self.requires_grad() || rhs.requires_grad()).then(|| rec(self.id, rhs.id));
        self.graph.push(op, ls, out, record)
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>, TensorError> {
        self.map("sigmoid", sigmoid, |id| Op::Sigmoid { input: id })
    }

    pub fn tanh(&self) -> Result<Tensor<T>, TensorError> {
        self.map("tanh", |v| v.tanh(), |id| Op::Tanh { input: id })
    }

    pub fn relu(&self) -> Result<Tensor<T>, TensorError> {
        self.map(
            "relu",
            |v| if v > T::ZERO { v } else { T::ZERO },
            |id| Op::Relu { input: id },
        )
    }

    /// Elementwise absolute value (subgradient 0 at the kink).
    pub fn abs(&self) -> Result<Tensor<T>, TensorError> {
        self.map("abs", |v| v.abs(), |id| Op::Abs { input: id })
    }

    /// Multiply every element by a fixed scalar.
    pub fn scale(&self, factor: T) -> Result<Tensor<T>, TensorError> {
        if !factor.is_finite() {
            return Err(TensorError::NonFinite { op: "scale" });
        }
        self.map(
            "scale",
            |v| v * factor,
            |id| Op::Scale { input: id, factor },
        )
    }

    fn map(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        rec: impl Fn(usize) -> Op<T>,
    ) -> Result<Tensor<T>, TensorError> {
        let shape = self.shape();
        let v = self.values_rc();
        let out: Vec<T> = v.iter().map(|&x| f(x)).collect();
        let record = self.requires_grad().then(|| rec(self.id));
        self.graph.push(op, shape, out, record)
    }

    /// Softmax along `axis`, computed with max-subtraction for stability.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "softmax",
                axis,
                shape,
            });
        }
        let v = self.values_rc();
        let mut out = vec![T::ZERO; v.len()];
        softmax_lanes(&v, &shape, axis, &mut out);
        let record = self.requires_grad().then_some(Op::Softmax {
            input: self.id,
            axis,
        });
        self.graph.push("softmax", shape, out, record)
    }

    /// Swap two axes (copies; no stride views).
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>, TensorError> {
        let shape = self.shape();
        if a >= shape.len() || b >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                op: "transpose",
                axis: a.max(b),
                shape,
            });
        }
        let v = self.values_rc();
        let (out_shape, out) = transpose_copy(&v, &shape, a, b);
        let record = self.requires_grad().then_some(Op::Transpose {
            input: self.id,
            a,
            b,
        });
        self.graph.push("transpose", out_shape, out, record)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor<T>, TensorError> {
        let v = self.values_rc();
        let mut acc = T::ZERO;
        for &x in v.iter() {
            acc += x;
        }
        let record = self.requires_grad().then_some(Op::Sum { input: self.id });
        self.graph.push("sum", vec![], vec![acc], record)
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Result<Tensor<T>, TensorError> {
        let v = self.values_rc();
        let mut acc = T::ZERO;
        for &x in v.iter() {
            acc += x;
        }
        let n = T::from_f64(v.len() as f64);
        let record = self.requires_grad().then_some(Op::Mean { input: self.id });
        self.graph.push("mean", vec![], vec![acc / n], record)
    }

    /// Copy `len` consecutive entries of the leading axis, starting at `start`.
    pub fn slice_lead(&self, start: usize, len: usize) -> Result<Tensor<T>, TensorError> {
        let shape = self.shape();
        if shape.is_empty() || len == 0 || start + len > shape[0] {
            return Err(TensorError::InvalidShape {
                op: "slice_lead",
                shape,
                reason: "slice range exceeds the leading axis",
            });
        }
        let inner: usize = shape[1..].iter().product();
        let v = self.values_rc();
        let out = v[start * inner..(start + len) * inner].to_vec();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let record = self.requires_grad().then_some(Op::SliceLead {
            input: self.id,
            start,
        });
        self.graph.push("slice_lead", out_shape, out, record)
    }

    /// Reinterpret the flat values under a new shape with equal element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        let shape = self.shape();
        if numel(new_shape) != numel(&shape) || new_shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: shape,
                rhs: new_shape.to_vec(),
            });
        }
        let out = self.values_rc().to_vec();
        let record = self
            .requires_grad()
            .then_some(Op::Reshape { input: self.id });
        self.graph.push("reshape", new_shape.to_vec(), out, record)
    }

    /// Per-node weight generation: `(n, k) x (k, i, j) -> (n, i, j)`.
    ///
    /// `out[n] = sum_k embed[n, k] * weights[k]` — the contraction that turns
    /// node embeddings into node-specific weight matrices.
    pub fn mix_weights(&self, weights: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        check_same_graph("mix_weights", self, weights)?;
        let es = self.shape();
        let ws = weights.shape();
        if es.len() != 2 || ws.len() != 3 || es[1] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "mix_weights",
                lhs: es,
                rhs: ws,
            });
        }
        let (n, k) = (es[0], es[1]);
        let mat = ws[1] * ws[2];
        let ev = self.values_rc();
        let wv = weights.values_rc();
        let mut out = vec![T::ZERO; n * mat];
        for ni in 0..n {
            let dst = &mut out[ni * mat..(ni + 1) * mat];
            for ki in 0..k {
                let c = ev[ni * k + ki];
                let src = &wv[ki * mat..(ki + 1) * mat];
                for (d, &s) in dst.iter_mut().zip(src.iter()) {
                    *d += c * s;
                }
            }
        }
        let record = (self.requires_grad() || weights.requires_grad()).then_some(Op::MixWeights {
            embed: self.id,
            weights: weights.id,
        });
        self.graph
            .push("mix_weights", vec![n, ws[1], ws[2]], out, record)
    }

    /// Per-node vector-matrix product: `(n, i) x (n, i, j) -> (n, j)`.
    pub fn node_matmul(&self, mats: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        check_same_graph("node_matmul", self, mats)?;
        let vs = self.shape();
        let ms = mats.shape();
        if vs.len() != 2 || ms.len() != 3 || vs[0] != ms[0] || vs[1] != ms[1] {
            return Err(TensorError::ShapeMismatch {
                op: "node_matmul",
                lhs: vs,
                rhs: ms,
            });
        }
        let (n, i, j) = (ms[0], ms[1], ms[2]);
        let xv = self.values_rc();
        let mv = mats.values_rc();
        let mut out = vec![T::ZERO; n * j];
        for ni in 0..n {
            for ii in 0..i {
                let c = xv[ni * i + ii];
                let row = &mv[ni * i * j + ii * j..ni * i * j + (ii + 1) * j];
                let dst = &mut out[ni * j..(ni + 1) * j];
                for (d, &s) in dst.iter_mut().zip(row.iter()) {
                    *d += c * s;
                }
            }
        }
        let record = (self.requires_grad() || mats.requires_grad()).then_some(Op::NodeMatmul {
            vecs: self.id,
            mats: mats.id,
        });
        self.graph.push("node_matmul", vec![n, j], out, record)
    }
}

/// Concatenate tensors along `axis`; all other extents must agree.
pub fn concat<T: Scalar>(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
    let first = parts
        .first()
        .ok_or(TensorError::EmptyInput { op: "concat" })?;
    let base = first.shape();
    if axis >= base.len() {
        return Err(TensorError::AxisOutOfRange {
            op: "concat",
            axis,
            shape: base,
        });
    }
    let mut axis_total = 0usize;
    for p in parts {
        check_same_graph("concat", first, p)?;
        let s = p.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(base.iter())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: base,
                rhs: s,
            });
        }
        axis_total += s[axis];
    }
    let mut out_shape = base.clone();
    out_shape[axis] = axis_total;
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let values: Vec<Rc<[T]>> = parts.iter().map(|p| p.values_rc()).collect();
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let mut out = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for (v, &e) in values.iter().zip(extents.iter()) {
            let block = e * inner;
            out.extend_from_slice(&v[o * block..(o + 1) * block]);
        }
    }
    let record = parts.iter().any(|p| p.requires_grad()).then(|| Op::Concat {
        parts: parts.iter().map(|p| p.id).collect(),
        axis,
    });
    first.graph.push("concat", out_shape, out, record)
}

fn matmul_into<T: Scalar>(lhs: &[T], rhs: &[T], rows: usize, k: usize, m: usize, out: &mut [T]) {
    for r in 0..rows {
        let lrow = &lhs[r * k..(r + 1) * k];
        let orow = &mut out[r * m..(r + 1) * m];
        for (ki, &l) in lrow.iter().enumerate() {
            let rrow = &rhs[ki * m..(ki + 1) * m];
            for (o, &rv) in orow.iter_mut().zip(rrow.iter()) {
                *o += l * rv;
            }
        }
    }
}

fn softmax_lanes<T: Scalar>(v: &[T], shape: &[usize], axis: usize, out: &mut [T]) {
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * extent * inner + i;
            let mut max = v[base];
            for e in 1..extent {
                max = max.maximum(v[base + e * inner]);
            }
            let mut denom = T::ZERO;
            for e in 0..extent {
                let ex = (v[base + e * inner] - max).exp();
                out[base + e * inner] = ex;
                denom += ex;
            }
            for e in 0..extent {
                out[base + e * inner] = out[base + e * inner] / denom;
            }
        }
    }
}

fn transpose_copy<T: Scalar>(v: &[T], shape: &[usize], a: usize, b: usize) -> (Vec<usize>, Vec<T>) {
    let mut out_shape = shape.to_vec();
    out_shape.swap(a, b);
    if a == b {
        return (out_shape, v.to_vec());
    }
    let out_strides = strides(&out_shape);
    let mut out = vec![v[0]; v.len()];
    let ndim = shape.len();
    let mut idx = vec![0usize; ndim];
    for &val in v.iter() {
        let mut off = 0;
        for d in 0..ndim {
            let coord = if d == a {
                idx[b]
            } else if d == b {
                idx[a]
            } else {
                idx[d]
            };
            off += coord * out_strides[d];
        }
        out[off] = val;
        // advance the row-major multi-index
        for d in (0..ndim).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

fn ensure_grad<T: Scalar>(node_grad: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    node_grad.get_or_insert_with(|| vec![T::ZERO; len])
}

/// Propagate the output gradient of one record into its inputs.
pub(crate) fn apply_backward<T: Scalar>(inner: &mut GraphInner<T>, record: &Record<T>) {
    let out_grad = match inner.nodes[record.out].grad.take() {
        Some(g) => g,
        None => return, // output never influenced the root
    };
    let g = &out_grad;
    match &record.op {
        Op::Matmul { lhs, rhs } => {
            let lv = Rc::clone(&inner.nodes[*lhs].values);
            let rv = Rc::clone(&inner.nodes[*rhs].values);
            let k = inner.nodes[*rhs].shape[0];
            let m = inner.nodes[*rhs].shape[1];
            let rows = lv.len() / k;
            if inner.nodes[*lhs].requires_grad {
                let gl = ensure_grad(&mut inner.nodes[*lhs].grad, lv.len());
                for r in 0..rows {
                    for ki in 0..k {
                        let mut acc = T::ZERO;
                        for j in 0..m {
                            acc += g[r * m + j] * rv[ki * m + j];
                        }
                        gl[r * k + ki] += acc;
                    }
                }
            }
            if inner.nodes[*rhs].requires_grad {
                let gr = ensure_grad(&mut inner.nodes[*rhs].grad, rv.len());
                for r in 0..rows {
                    for ki in 0..k {
                        let l = lv[r * k + ki];
                        for j in 0..m {
                            gr[ki * m + j] += l * g[r * m + j];
                        }
                    }
                }
            }
        }
        Op::Bmm { lhs, rhs } => {
            let lv = Rc::clone(&inner.nodes[*lhs].values);
            let rv = Rc::clone(&inner.nodes[*rhs].values);
            let ls = inner.nodes[*lhs].shape.clone();
            let rs = inner.nodes[*rhs].shape.clone();
            let (b, m, k, n) = (ls[0], ls[1], ls[2], rs[2]);
            if inner.nodes[*lhs].requires_grad {
                let gl = ensure_grad(&mut inner.nodes[*lhs].grad, lv.len());
                for bi in 0..b {
                    for r in 0..m {
                        for ki in 0..k {
                            let mut acc = T::ZERO;
                            for j in 0..n {
                                acc += g[bi * m * n + r * n + j] * rv[bi * k * n + ki * n + j];
                            }
                            gl[bi * m * k + r * k + ki] += acc;
                        }
                    }
                }
            }
            if inner.nodes[*rhs].requires_grad {
                let gr = ensure_grad(&mut inner.nodes[*rhs].grad, rv.len());
                for bi in 0..b {
                    for ki in 0..k {
                        for r in 0..m {
                            let l = lv[bi * m * k + r * k + ki];
                            for j in 0..n {
                                gr[bi * k * n + ki * n + j] += l * g[bi * m * n + r * n + j];
                            }
                        }
                    }
                }
            }
        }
        Op::Add { lhs, rhs } => {
            for id in [lhs, rhs] {
                if inner.nodes[*id].requires_grad {
                    let gi = ensure_grad(&mut inner.nodes[*id].grad, g.len());
                    for (d, &s) in gi.iter_mut().zip(g.iter()) {
                        *d += s;
                    }
                }
            }
        }
        Op::Sub { lhs, rhs } => {
            if inner.nodes[*lhs].requires_grad {
                let gi = ensure_grad(&mut inner.nodes[*lhs].grad, g.len());
                for (d, &s) in gi.iter_mut().zip(g.iter()) {
                    *d += s;
                }
            }
            if inner.nodes[*rhs].requires_grad {
                let gi = ensure_grad(&mut inner.nodes[*rhs].grad, g.len());
                for (d, &s) in gi.iter_mut().zip(g.iter()) {
                    *d = *d - s;
                }
            }
        }
        Op::AddBias { lhs, bias } => {
            if inner.nodes[*lhs].requires_grad {
                let gi = ensure_grad(&mut inner.nodes[*lhs].grad, g.len());
                for (d, &s) in gi.iter_mut().zip(g.iter()) {
                    *d += s;
                }
            }
            if inner.nodes[*bias].requires_grad {
                let m = inner.nodes[*bias].shape[0];
                let gb = ensure_grad(&mut inner.nodes[*bias].grad, m);
                for (i, &s) in g.iter().enumerate() {
                    gb[i % m] += s;
                }
            }
        }
        Op::Mul { lhs, rhs } => {
            let lv = Rc::clone(&inner.nodes[*lhs].values);
            let rv = Rc::clone(&inner.nodes[*rhs].values);
            if inner.nodes[*lhs].requires_grad {
                let gi = ensure_grad(&mut inner.nodes[*lhs].grad, g.len());
                for i in 0..g.len() {
                    gi[i] += g[i] * rv[i];
                }
            }
            if inner.nodes[*rhs].requires_grad {
                let gi = ensure_grad(&mut inner.nodes[*rhs].grad, g.len());
                for i in 0..g.len() {
                    gi[i] += g[i] * lv[i];
                }
            }
        }
        Op::Concat { parts, axis } => {
            let axis = *axis;
            let out_shape = inner.nodes[record.out].shape.clone();
            let inner_sz: usize = out_shape[axis + 1..].iter().product();
            let outer: usize = out_shape[..axis].iter().product();
            let total_axis = out_shape[axis];
            let mut offset = 0usize;
            for part in parts {
                let extent = inner.nodes[*part].shape[axis];
                if inner.nodes[*part].requires_grad {
                    let len = inner.nodes[*part].values.len();
                    let gp = ensure_grad(&mut inner.nodes[*part].grad, len);
                    for o in 0..outer {
                        let src = o * total_axis * inner_sz + offset * inner_sz;
                        let dst = o * extent * inner_sz;
                        for i in 0..extent * inner_sz {
                            gp[dst + i] += g[src + i];
                        }
                    }
                }
                offset += extent;
            }
        }
        Op::Sigmoid { input } => {
            let y = Rc::clone(&inner.nodes[record.out].values);
            let gi = ensure_grad(&mut inner.nodes[*input].grad, g.len());
            for i in 0..g.len() {
                gi[i] += g[i] * y[i] * (T::ONE - y[i]);
            }
        }
        Op::Tanh { input } => {
            let y = Rc::clone(&inner.nodes[record.out].values);
            let gi = ensure_grad(&mut inner.nodes[*input].grad, g.len());
            for i in 0..g.len() {
                gi[i] += g[i] * (T::ONE - y[i] * y[i]);
            }
        }
        Op::Relu { input } => {
            let x = Rc::clone(&inner.nodes[*input].values);
            let gi = ensure_grad(&mut inner.nodes[*input].grad, g.len());
            for i in 0..g.len() {
                if x[i] > T::ZERO {
                    gi[i] += g[i];
                }
            }
        }
        Op::Abs { input } => {
            let x = Rc::clone(&inner.nodes[*input].values);
            let gi = ensure_grad(&mut inner.nodes[*input].grad, g.len());
            for i in 0..g.len() {
                if x[i] > T::ZERO {
                    gi[i] += g[i];
                } else if x[i] < T::ZERO {
                    gi[i] = gi[i] - g[i];
                }
            }
        }
        Op::Softmax { input, axis } => {
            let y = Rc::clone(&inner.nodes[record.out].values);
            let shape = inner.nodes[record.out].shape.clone();
            let extent = shape[*axis];
            let inner_sz: usize = shape[*axis + 1..].iter().product();
            let outer: usize = shape[..*axis].iter().product();
            let gi = ensure_grad(&mut inner.nodes[*input].grad, g.len());
            for o in 0..outer {
                for i in 0..inner_sz {
                    let base = o * extent * inner_sz + i;
                    let mut dot = T::ZERO;
                    for e in 0..extent {
                        let idx = base + e * inner_sz;
                        dot += y[idx] * g[idx];
                    }
                    for e in 0..extent {
                        let idx = base + e * inner_sz;
                        gi[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        }
        Op::Transpose { input, a, b } => {
            // gradient of a swap is the inverse swap
            let out_shape = inner.nodes[record.out].shape.clone();
            let (_, gt) = transpose_copy(g, &out_shape, *a, *b);
            let gi = ensure_grad(&mut inner.nodes[*input].grad, gt.len());
            for (d, &s) in gi.iter_mut().zip(gt.iter()) {
                *d += s;
            }
        }
        Op::Scale { input, factor } => {
            let gi = ensure_grad(&mut inner.nodes[*input].grad, g.len());
            for (d, &s) in gi.iter_mut().zip(g.iter()) {
                *d += s * *factor;
            }
        }
        Op::Sum { input } => {
            let len = inner.nodes[*input].values.len();
            let gi = ensure_grad(&mut inner.nodes[*input].grad, len);
            let s = g[0];
            for d in gi.iter_mut() {
                *d += s;
            }
        }
        Op::Mean { input } => {
            let len = inner.nodes[*input].values.len();
            let gi = ensure_grad(&mut inner.nodes[*input].grad, len);
            let s = g[0] / T::from_f64(len as f64);
            for d in gi.iter_mut() {
                *d += s;
            }
        }
        Op::SliceLead { input, start } => {
            let in_shape = inner.nodes[*input].shape.clone();
            let inner_sz: usize = in_shape[1..].iter().product();
            let len = inner.nodes[*input].values.len();
            let gi = ensure_grad(&mut inner.nodes[*input].grad, len);
            let offset = start * inner_sz;
            for (i, &s) in g.iter().enumerate() {
                gi[offset + i] += s;
            }
        }
        Op::Reshape { input } => {
            let len = inner.nodes[*input].values.len();
            let gi = ensure_grad(&mut inner.nodes[*input].grad, len);
            for (d, &s) in gi.iter_mut().zip(g.iter()) {
                *d += s;
            }
        }
        Op::MixWeights { embed, weights } => {
            let ev = Rc::clone(&inner.nodes[*embed].values);
            let wv = Rc::clone(&inner.nodes[*weights].values);
            let es = inner.nodes[*embed].shape.clone();
            let ws = inner.nodes[*weights].shape.clone();
            let (n, k, mat) = (es[0], es[1], ws[1] * ws[2]);
            if inner.nodes[*embed].requires_grad {
                let ge = ensure_grad(&mut inner.nodes[*embed].grad, ev.len());
                for ni in 0..n {
                    for ki in 0..k {
                        let mut acc = T::ZERO;
                        let gr = &g[ni * mat..(ni + 1) * mat];
                        let wr = &wv[ki * mat..(ki + 1) * mat];
                        for (gv, &w) in gr.iter().zip(wr.iter()) {
                            acc += *gv * w;
                        }
                        ge[ni * k + ki] += acc;
                    }
                }
            }
            if inner.nodes[*weights].requires_grad {
                let gw = ensure_grad(&mut inner.nodes[*weights].grad, wv.len());
                for ni in 0..n {
                    let gr = &g[ni * mat..(ni + 1) * mat];
                    for ki in 0..k {
                        let c = ev[ni * k + ki];
                        let dst = &mut gw[ki * mat..(ki + 1) * mat];
                        for (d, &gv) in dst.iter_mut().zip(gr.iter()) {
                            *d += c * gv;
                        }
                    }
                }
            }
        }
        Op::NodeMatmul { vecs, mats } => {
            let xv = Rc::clone(&inner.nodes[*vecs].values);
            let mv = Rc::clone(&inner.nodes[*mats].values);
            let ms = inner.nodes[*mats].shape.clone();
            let (n, i, j) = (ms[0], ms[1], ms[2]);
            if inner.nodes[*vecs].requires_grad {
                let gx = ensure_grad(&mut inner.nodes[*vecs].grad, xv.len());
                for ni in 0..n {
                    for ii in 0..i {
                        let mut acc = T::ZERO;
                        for ji in 0..j {
                            acc += g[ni * j + ji] * mv[ni * i * j + ii * j + ji];
                        }
                        gx[ni * i + ii] += acc;
                    }
                }
            }
            if inner.nodes[*mats].requires_grad {
                let gm = ensure_grad(&mut inner.nodes[*mats].grad, mv.len());
                for ni in 0..n {
                    for ii in 0..i {
                        let c = xv[ni * i + ii];
                        for ji in 0..j {
                            gm[ni * i * j + ii * j + ji] += c * g[ni * j + ji];
                        }
                    }
                }
            }
        }
    }
    inner.nodes[record.out].grad = Some(out_grad);
}

#[cfg(test)]
mod tests {
    use super::super::Graph;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let g: Graph<f64> = Graph::new();
        let x = g.constant(&[2], vec![0.0, 0.0]).unwrap();
        assert_eq!(x.softmax(0).unwrap().values(), vec![0.5, 0.5]);
    }

    #[test]
    fn analytic_activation_values() {
        let g: Graph<f64> = Graph::new();
        let x = g.constant(&[1], vec![0.0]).unwrap();
        assert_eq!(x.sigmoid().unwrap().values(), vec![0.5]);
        assert_eq!(x.tanh().unwrap().values(), vec![0.0]);
    }

    #[test]
    fn relu_gram_row_softmax_matches_hand_value() {
        // E = [[1],[2]]: softmax(ReLU(E E^T)) row 0 = [1/(1+e), e/(1+e)]
        let g: Graph<f64> = Graph::new();
        let e = g.constant(&[2, 1], vec![1.0, 2.0]).unwrap();
        let gram = e.matmul(&e.transpose(0, 1).unwrap()).unwrap();
        assert_eq!(gram.values(), vec![1.0, 2.0, 2.0, 4.0]);
        let adj = gram.relu().unwrap().softmax(1).unwrap();
        let v = adj.values();
        let e1 = std::f64::consts::E;
        assert!((v[0] - 1.0 / (1.0 + e1)).abs() < 1e-9);
        assert!((v[1] - e1 / (1.0 + e1)).abs() < 1e-9);
        assert!((v[0] - 0.26894).abs() < 1e-5);
        assert!((v[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn matmul_rejects_mismatched_shapes() {
        let g: Graph<f64> = Graph::new();
        let a = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2, 2]"));
    }

    #[test]
    fn overflow_is_an_error() {
        let g: Graph<f32> = Graph::new();
        let a = g.constant(&[1], vec![f32::MAX]).unwrap();
        assert!(matches!(
            a.mul(&a),
            Err(TensorError::NonFinite { op: "mul" })
        ));
    }

    #[test]
    fn concat_slice_round_trip() {
        let g: Graph<f64> = Graph::new();
        let a = g.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = g.constant(&[1, 2], vec![5.0, 6.0]).unwrap();
        let c = concat(&[a.clone(), b.clone()], 0).unwrap();
        assert_eq!(c.shape(), vec![3, 2]);
        assert_eq!(c.slice_lead(0, 2).unwrap().values(), a.values());
        assert_eq!(c.slice_lead(2, 1).unwrap().values(), b.values());
    }

    #[test]
    fn concat_along_last_axis() {
        let g: Graph<f64> = Graph::new();
        let a = g.constant(&[2, 1], vec![1.0, 3.0]).unwrap();
        let b = g.constant(&[2, 2], vec![2.0, 20.0, 4.0, 40.0]).unwrap();
        let c = concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 3]);
        assert_eq!(c.values(), vec![1.0, 2.0, 20.0, 3.0, 4.0, 40.0]);
    }

    #[test]
    fn transpose_round_trip_and_layout() {
        let g: Graph<f64> = Graph::new();
        let a = g
            .constant(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
            .unwrap();
        let t = a.transpose(0, 1).unwrap();
        assert_eq!(t.shape(), vec![3, 2]);
        assert_eq!(t.values(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(t.transpose(0, 1).unwrap().values(), a.values());
    }

    #[test]
    fn bias_add_broadcasts_over_leading_axes() {
        let g: Graph<f64> = Graph::new();
        let x = g.constant(&[2, 2, 2], vec![0.0; 8]).unwrap();
        let b = g.constant(&[2], vec![1.0, -1.0]).unwrap();
        let y = x.add_bias(&b).unwrap();
        assert_eq!(y.values(), vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn mix_weights_matches_manual_contraction() {
        let g: Graph<f64> = Graph::new();
        // e: 2x2, w: 2x1x2 -> out 2x1x2; out[n] = e[n,0]*w[0] + e[n,1]*w[1]
        let e = g.constant(&[2, 2], vec![1.0, 2.0, 0.5, 0.0]).unwrap();
        let w = g
            .constant(&[2, 1, 2], vec![1.0, 10.0, 100.0, 1000.0])
            .unwrap();
        let out = e.mix_weights(&w).unwrap();
        assert_eq!(out.shape(), vec![2, 1, 2]);
        assert_eq!(out.values(), vec![201.0, 2010.0, 0.5, 5.0]);
    }

    #[test]
    fn node_matmul_matches_manual_product() {
        let g: Graph<f64> = Graph::new();
        let x = g.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // mats: per node 2x2 identity and 2x2 of twos
        let m = g
            .constant(&[2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0, 2.0])
            .unwrap();
        let out = x.node_matmul(&m).unwrap();
        assert_eq!(out.values(), vec![1.0, 2.0, 14.0, 14.0]);
    }

    /// Central finite difference of `sum(op(x))` for every op, on random
    /// small shapes with a fixed seed. 64-bit precision, step 1e-5.
    #[test]
    fn every_op_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let step = 1e-5;
        let tol = 1e-4;

        type Builder =
            Box<dyn Fn(&Graph<f64>, &[super::super::Tensor<f64>]) -> super::super::Tensor<f64>>;
        // (name, input shapes, op builder)
        let cases: Vec<(&str, Vec<Vec<usize>>, Builder)> = vec![
            (
                "matmul",
                vec![vec![3, 4], vec![4, 2]],
                Box::new(|_, t| t[0].matmul(&t[1]).unwrap()),
            ),
            (
                "matmul_3d",
                vec![vec![2, 3, 4], vec![4, 2]],
                Box::new(|_, t| t[0].matmul(&t[1]).unwrap()),
            ),
            (
                "bmm",
                vec![vec![2, 3, 2], vec![2, 2, 4]],
                Box::new(|_, t| t[0].bmm(&t[1]).unwrap()),
            ),
            (
                "add",
                vec![vec![2, 3], vec![2, 3]],
                Box::new(|_, t| t[0].add(&t[1]).unwrap()),
            ),
            (
                "sub",
                vec![vec![5], vec![5]],
                Box::new(|_, t| t[0].sub(&t[1]).unwrap()),
            ),
            (
                "mul",
                vec![vec![2, 3], vec![2, 3]],
                Box::new(|_, t| t[0].mul(&t[1]).unwrap()),
            ),
            (
                "add_bias",
                vec![vec![2, 2, 3], vec![3]],
                Box::new(|_, t| t[0].add_bias(&t[1]).unwrap()),
            ),
            (
                "sigmoid",
                vec![vec![2, 3]],
                Box::new(|_, t| t[0].sigmoid().unwrap()),
            ),
            (
                "tanh",
                vec![vec![2, 3]],
                Box::new(|_, t| t[0].tanh().unwrap()),
            ),
            ("relu", vec![vec![7]], Box::new(|_, t| t[0].relu().unwrap())),
            ("abs", vec![vec![7]], Box::new(|_, t| t[0].abs().unwrap())),
            (
                "softmax_axis0",
                vec![vec![3, 2]],
                Box::new(|_, t| t[0].softmax(0).unwrap()),
            ),
            (
                "softmax_axis1",
                vec![vec![3, 4]],
                Box::new(|_, t| t[0].softmax(1).unwrap()),
            ),
            (
                "transpose",
                vec![vec![2, 3, 2]],
                Box::new(|_, t| t[0].transpose(0, 2).unwrap()),
            ),
            (
                "scale",
                vec![vec![4]],
                Box::new(|_, t| t[0].scale(-1.7).unwrap()),
            ),
            (
                "mean",
                vec![vec![3, 3]],
                Box::new(|_, t| t[0].mean().unwrap()),
            ),
            (
                "slice_lead",
                vec![vec![4, 3]],
                Box::new(|_, t| t[0].slice_lead(1, 2).unwrap()),
            ),
            (
                "reshape",
                vec![vec![2, 6]],
                Box::new(|_, t| t[0].reshape(&[3, 4]).unwrap()),
            ),
            (
                "concat",
                vec![vec![2, 2], vec![3, 2]],
                Box::new(|_, t| concat(&[t[0].clone(), t[1].clone()], 0).unwrap()),
            ),
            (
                "mix_weights",
                vec![vec![3, 2], vec![2, 4, 3]],
                Box::new(|_, t| t[0].mix_weights(&t[1]).unwrap()),
            ),
            (
                "node_matmul",
                vec![vec![3, 4], vec![3, 4, 2]],
                Box::new(|_, t| t[0].node_matmul(&t[1]).unwrap()),
            ),
            (
                "composite",
                vec![vec![3, 3], vec![3, 3]],
                Box::new(|_, t| {
                    t[0].matmul(&t[1])
                        .unwrap()
                        .relu()
                        .unwrap()
                        .softmax(1)
                        .unwrap()
                        .mul(&t[0])
                        .unwrap()
                }),
            ),
        ];

        for (name, shapes, build) in &cases {
            let inputs: Vec<Vec<f64>> = shapes
                .iter()
                .map(|s| {
                    (0..numel(s))
                        .map(|_| rng.gen_range(-1.5..1.5))
                        .collect::<Vec<f64>>()
                })
                .collect();

            let eval = |inputs: &[Vec<f64>]| -> f64 {
                let g: Graph<f64> = Graph::new();
                let leaves: Vec<_> = shapes
                    .iter()
                    .zip(inputs.iter())
                    .map(|(s, v)| g.constant(s, v.clone()).unwrap())
                    .collect();
                build(&g, &leaves).sum().unwrap().item().unwrap()
            };

            // analytic gradients
            let g: Graph<f64> = Graph::new();
            let leaves: Vec<_> = shapes
                .iter()
                .zip(inputs.iter())
                .map(|(s, v)| g.var(s, v.clone()).unwrap())
                .collect();
            build(&g, &leaves).sum().unwrap().backward().unwrap();

            for (pi, leaf) in leaves.iter().enumerate() {
                let analytic = leaf.grad().expect("leaf should have a gradient");
                for ei in 0..analytic.len() {
                    let mut plus = inputs.clone();
                    plus[pi][ei] += step;
                    let mut minus = inputs.clone();
                    minus[pi][ei] -= step;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
                    let a = analytic[ei];
                    let rel = (a - fd).abs() / f64::max(1.0, f64::max(a.abs(), fd.abs()));
                    assert!(
                        rel <= tol,
                        "{name}: param {pi} elem {ei}: analytic {a} vs fd {fd} (rel {rel:.3e})"
                    );
                }
            }
        }
    }
}
