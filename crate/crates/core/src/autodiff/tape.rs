//! Reverse-mode tape over [`Array`] values.
//!
//! Every op evaluates eagerly, records its inputs plus whatever it needs for
//! the backward pass, and returns a [`Var`] handle. Node ids are assigned in
//! creation order, so the tape is topologically sorted by construction and
//! [`Tape::backward`] is a single reverse sweep.

use super::array::{axpy, dot, Array};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    CrossEntropy {
        p: Var,
        index: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    BceWithLogits {
        logit: Var,
        target: T,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param => Vec::new(),
            Op::MatMul(a, b) | Op::MatMulNT(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(a) | Op::Scale(a, _) | Op::Gelu(a) | Op::Sum(a) | Op::Mean(a) => vec![*a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Softmax { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::GatherRows { x, .. }
            | Op::Dropout { x, .. } => vec![*x],
            Op::CrossEntropy { p, .. } => vec![*p],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::BceWithLogits { logit, .. } => vec![*logit],
            Op::Embedding { table, .. } => vec![*table],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
        }
    }
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Computation record for one forward/backward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<Option<Var>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative).
    let c = lit::<T>((2.0 / std::f64::consts::PI).sqrt());
    let k = lit::<T>(0.044715);
    let half = lit::<T>(0.5);
    let x3 = x * x * x;
    let u = c * (x + k * x3);
    let t = u.tanh();
    let val = half * x * (T::one() + t);
    let du = c * (T::one() + lit::<T>(3.0) * k * x * x);
    let der = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
    (val, der)
}

fn softmax_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, n, inner)
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, name: &'static str, value: Array<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = op.inputs().iter().any(|&v| self.needs(v));
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Array<T>, needs_grad: bool, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input that receives a gradient (e.g. region features under attribution).
    pub fn leaf(&mut self, value: Array<T>) -> Result<Var> {
        self.push_leaf(value, true, Op::Leaf)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Array<T>) -> Result<Var> {
        self.push_leaf(value, false, Op::Leaf)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.params.len() <= id.index() {
            self.params.resize(id.index() + 1, None);
        }
        if let Some(v) = self.params[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params[id.index()] = Some(v);
        v
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Error::Invalid {
                op,
                msg: format!("expected a matrix, got shape {s:?}"),
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                if av != T::zero() {
                    axpy(av, &bd[p * n..(p + 1) * n], row);
                }
            }
        }
        let value = Array::new(&[m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.value(a).shape(), self.value(b).shape()));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ar = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &bd[j * k..(j + 1) * k]);
            }
        }
        let value = Array::new(&[m, n], out)?;
        self.push("matmul_nt", value, Op::MatMulNT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(a, "transpose")?;
        let ad = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = ad[i * n + j];
            }
        }
        let value = Array::new(&[n, m], out)?;
        self.push("transpose", value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Array::new(va.shape(), data)?;
        self.push("add", value, Op::Add(a, b))
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let n = va.cols();
        if vb.len() != n || va.rank() == 0 {
            return Err(shape_err("add_row", va.shape(), vb.shape()));
        }
        let bd = vb.data();
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, &b) in row.iter_mut().zip(bd) {
                *x += b;
            }
        }
        let value = Array::new(va.shape(), data)?;
        self.push("add_row", value, Op::AddRow(a, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Array::new(va.shape(), data)?;
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        self.push("scale", value, Op::Scale(a, c))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of length `n`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let vx = self.value(x);
        let n = vx.cols();
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.len() != n || vb.len() != n || vx.rank() == 0 {
            return Err(shape_err("layernorm", vx.shape(), vg.shape()));
        }
        let rows = vx.rows();
        let nf = lit::<T>(n as f64);
        let mut xhat = vec![T::zero(); rows * n];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * n];
        for r in 0..rows {
            let xr = vx.row(r);
            let mean = xr.iter().copied().sum::<T>() / nf;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (xr[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * vg.data()[c] + vb.data()[c];
            }
        }
        let value = Array::new(vx.shape(), out)?;
        self.push(
            "layernorm",
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| gelu_parts(v).0);
        self.push("gelu", value, Op::Gelu(x))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() {
            return Err(Error::Invalid {
                op: "softmax",
                msg: format!("axis {axis} out of bounds for rank {}", vx.rank()),
            });
        }
        let (outer, n, inner) = softmax_layout(vx.shape(), axis);
        let xd = vx.data();
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let mut m = T::neg_infinity();
                for k in 0..n {
                    m = m.max(xd[idx(k)]);
                }
                let mut s = T::zero();
                for k in 0..n {
                    let e = (xd[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    s += e;
                }
                for k in 0..n {
                    out[idx(k)] /= s;
                }
            }
        }
        let value = Array::new(vx.shape(), out)?;
        self.push("softmax", value, Op::Softmax { x, axis })
    }

    /// `-ln p[index]` for a normalized distribution `p`.
    pub fn cross_entropy(&mut self, p: Var, index: usize) -> Result<Var> {
        let vp = self.value(p);
        if index >= vp.len() {
            return Err(Error::Index {
                op: "cross_entropy",
                index,
                len: vp.len(),
            });
        }
        let value = Array::scalar(-vp.data()[index].ln());
        self.push("cross_entropy", value, Op::CrossEntropy { p, index })
    }

    /// Mean over rows of `-ln softmax(row)[target]`, fused for stability.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        let (rows, n) = (vl.rows(), vl.cols());
        if targets.len() != rows || rows == 0 {
            return Err(shape_err("softmax_cross_entropy", vl.shape(), &[targets.len()]));
        }
        let mut probs = vec![T::zero(); rows * n];
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(Error::Index {
                    op: "softmax_cross_entropy",
                    index: t,
                    len: n,
                });
            }
            let row = vl.row(r);
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let s: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + s.ln();
            loss += lse - row[t];
            for c in 0..n {
                probs[r * n + c] = (row[c] - lse).exp();
            }
        }
        let value = Array::scalar(loss / lit(rows as f64));
        self.push(
            "softmax_cross_entropy",
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Binary cross-entropy on a single logit against a target in [0, 1].
    pub fn bce_with_logits(&mut self, logit: Var, target: T) -> Result<Var> {
        let vl = self.value(logit);
        if vl.len() != 1 {
            return Err(shape_err("bce_with_logits", vl.shape(), &[1]));
        }
        let z = vl.item();
        let loss = z.max(T::zero()) - z * target + (T::one() + (-z.abs()).exp()).ln();
        self.push(
            "bce_with_logits",
            Array::scalar(loss),
            Op::BceWithLogits { logit, target },
        )
    }

    /// Gathers rows of `table` (shape `V × d`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (v, d) = self.matrix_dims(table, "embedding")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    op: "embedding",
                    index: id,
                    len: v,
                });
            }
            out.extend_from_slice(vt.row(id));
        }
        let value = Array::new(&[ids.len(), d], out)?;
        self.push(
            "embedding",
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_rows"))?;
        let d = self.matrix_dims(*first, "concat_rows")?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_rows")?;
            if c != d {
                return Err(shape_err(
                    "concat_rows",
                    self.value(*first).shape(),
                    self.value(p).shape(),
                ));
            }
            out.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let value = Array::new(&[rows, d], out)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
        let m = self.matrix_dims(*first, "concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_cols")?;
            if r != m {
                return Err(shape_err(
                    "concat_cols",
                    self.value(*first).shape(),
                    self.value(p).shape(),
                ));
            }
            total += c;
        }
        let mut out = vec![T::zero(); m * total];
        let mut off = 0;
        for &p in parts {
            let vp = self.value(p);
            let c = vp.cols();
            for r in 0..m {
                out[r * total + off..r * total + off + c].copy_from_slice(vp.row(r));
            }
            off += c;
        }
        let value = Array::new(&[m, total], out)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "slice_rows")?;
        if start >= end || end > m {
            return Err(Error::Invalid {
                op: "slice_rows",
                msg: format!("range {start}..{end} invalid for {m} rows"),
            });
        }
        let data = self.value(x).data()[start * n..end * n].to_vec();
        let value = Array::new(&[end - start, n], data)?;
        self.push("slice_rows", value, Op::SliceRows { x, start })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "slice_cols")?;
        if start >= end || end > n {
            return Err(Error::Invalid {
                op: "slice_cols",
                msg: format!("range {start}..{end} invalid for {n} cols"),
            });
        }
        let vx = self.value(x);
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&vx.row(r)[start..end]);
        }
        let value = Array::new(&[m, w], out)?;
        self.push("slice_cols", value, Op::SliceCols { x, start })
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "gather_rows")?;
        let vx = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: i,
                    len: m,
                });
            }
            out.extend_from_slice(vx.row(i));
        }
        let value = Array::new(&[idx.len(), n], out)?;
        self.push("gather_rows", value, Op::GatherRows { x, idx: idx.to_vec() })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push("sum", Array::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::Empty("mean"));
        }
        let s = v.data().iter().copied().sum::<T>() / lit(v.len() as f64);
        self.push("mean", Array::scalar(s), Op::Mean(x))
    }

    /// Inverted dropout; a zero rate returns `x` itself.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Invalid {
                op: "dropout",
                msg: format!("rate {rate} must be < 1"),
            });
        }
        let keep = lit::<T>(1.0 / (1.0 - rate));
        let vx = self.value(x);
        let mask: Vec<T> = (0..vx.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = vx.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Array::new(vx.shape(), data)?;
        self.push("dropout", value, Op::Dropout { x, mask })
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Array::filled(lv.shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn backprop_node(&self, node: &Node<T>, dy: &Array<T>, grads: &mut [Option<Array<T>>]) {
        let dyd = dy.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.needs(*a) {
                    let ga = self.slot(grads, *a);
                    for i in 0..m {
                        let dr = &dyd[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] += dot(dr, &vb.data()[p * n..(p + 1) * n]);
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = self.slot(grads, *b);
                    for i in 0..m {
                        let dr = &dyd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = va.data()[i * k + p];
                            if av != T::zero() {
                                axpy(av, dr, &mut gb[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[0];
                if self.needs(*a) {
                    let ga = self.slot(grads, *a);
                    for i in 0..m {
                        for j in 0..n {
                            let d = dyd[i * n + j];
                            if d != T::zero() {
                                axpy(d, &vb.data()[j * k..(j + 1) * k], &mut ga[i * k..(i + 1) * k]);
                            }
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = self.slot(grads, *b);
                    for i in 0..m {
                        for j in 0..n {
                            let d = dyd[i * n + j];
                            if d != T::zero() {
                                axpy(d, &va.data()[i * k..(i + 1) * k], &mut gb[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    let (m, n) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                    let ga = self.slot(grads, *a);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += dyd[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        let g = self.slot(grads, v);
                        axpy(T::one(), dyd, g);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*a) {
                    axpy(T::one(), dyd, self.slot(grads, *a));
                }
                if self.needs(*bias) {
                    let n = self.value(*bias).len();
                    let gb = self.slot(grads, *bias);
                    for row in dyd.chunks(n) {
                        axpy(T::one(), row, gb);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.needs(v) {
                        let od = self.value(other).data();
                        let g = self.slot(grads, v);
                        for ((gi, &d), &o) in g.iter_mut().zip(dyd).zip(od) {
                            *gi += d * o;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    axpy(*c, dyd, self.slot(grads, *a));
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gd = self.value(*gamma).data();
                let n = gd.len();
                let nf = lit::<T>(n as f64);
                if self.needs(*x) {
                    let gx = self.slot(grads, *x);
                    let mut dxhat = vec![T::zero(); n];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let dr = &dyd[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        for c in 0..n {
                            dxhat[c] = dr[c] * gd[c];
                        }
                        let s1: T = dxhat.iter().copied().sum();
                        let s2 = dot(&dxhat, hr);
                        for c in 0..n {
                            gx[r * n + c] += is / nf * (nf * dxhat[c] - s1 - hr[c] * s2);
                        }
                    }
                }
                if self.needs(*gamma) {
                    let gg = self.slot(grads, *gamma);
                    for (dr, hr) in dyd.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            gg[c] += dr[c] * hr[c];
                        }
                    }
                }
                if self.needs(*beta) {
                    let gb = self.slot(grads, *beta);
                    for dr in dyd.chunks(n) {
                        axpy(T::one(), dr, gb);
                    }
                }
            }
            Op::Gelu(x) => {
                if self.needs(*x) {
                    let xd = self.value(*x).data();
                    let gx = self.slot(grads, *x);
                    for ((g, &d), &v) in gx.iter_mut().zip(dyd).zip(xd) {
                        *g += d * gelu_parts(v).1;
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if self.needs(*x) {
                    let y = node.value.data();
                    let (outer, n, inner) = softmax_layout(node.value.shape(), *axis);
                    let gx = self.slot(grads, *x);
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |k: usize| (o * n + k) * inner + i;
                            let mut s = T::zero();
                            for k in 0..n {
                                s += dyd[idx(k)] * y[idx(k)];
                            }
                            for k in 0..n {
                                gx[idx(k)] += y[idx(k)] * (dyd[idx(k)] - s);
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { p, index } => {
                if self.needs(*p) {
                    let pv = self.value(*p).data()[*index];
                    let gp = self.slot(grads, *p);
                    gp[*index] -= dyd[0] / pv;
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                if self.needs(*logits) {
                    let n = self.value(*logits).cols();
                    let scale = dyd[0] / lit(targets.len() as f64);
                    let gl = self.slot(grads, *logits);
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..n {
                            let ind = if c == t { T::one() } else { T::zero() };
                            gl[r * n + c] += scale * (probs[r * n + c] - ind);
                        }
                    }
                }
            }
            Op::BceWithLogits { logit, target } => {
                if self.needs(*logit) {
                    let z = self.value(*logit).item();
                    let sig = T::one() / (T::one() + (-z).exp());
                    self.slot(grads, *logit)[0] += dyd[0] * (sig - *target);
                }
            }
            Op::Embedding { table, ids } => {
                if self.needs(*table) {
                    let d = self.value(*table).cols();
                    let gt = self.slot(grads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(T::one(), &dyd[r * d..(r + 1) * d], &mut gt[id * d..(id + 1) * d]);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.needs(p) {
                        axpy(T::one(), &dyd[off..off + len], self.slot(grads, p));
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let (m, c) = (self.value(p).rows(), self.value(p).cols());
                    if self.needs(p) {
                        let gp = self.slot(grads, p);
                        for r in 0..m {
                            axpy(
                                T::one(),
                                &dyd[r * total + off..r * total + off + c],
                                &mut gp[r * c..(r + 1) * c],
                            );
                        }
                    }
                    off += c;
                }
            }
            Op::SliceRows { x, start } => {
                if self.needs(*x) {
                    let n = self.value(*x).cols();
                    let gx = self.slot(grads, *x);
                    axpy(T::one(), dyd, &mut gx[start * n..start * n + dyd.len()]);
                }
            }
            Op::SliceCols { x, start } => {
                if self.needs(*x) {
                    let n = self.value(*x).cols();
                    let w = node.value.cols();
                    let gx = self.slot(grads, *x);
                    for (r, dr) in dyd.chunks(w).enumerate() {
                        axpy(T::one(), dr, &mut gx[r * n + start..r * n + start + w]);
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if self.needs(*x) {
                    let n = self.value(*x).cols();
                    let gx = self.slot(grads, *x);
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(T::one(), &dyd[r * n..(r + 1) * n], &mut gx[i * n..(i + 1) * n]);
                    }
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    for g in self.slot(grads, *x).iter_mut() {
                        *g += dyd[0];
                    }
                }
            }
            Op::Mean(x) => {
                if self.needs(*x) {
                    let d = dyd[0] / lit(self.value(*x).len() as f64);
                    for g in self.slot(grads, *x).iter_mut() {
                        *g += d;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.needs(*x) {
                    let gx = self.slot(grads, *x);
                    for ((g, &d), &m) in gx.iter_mut().zip(dyd).zip(mask) {
                        *g += d * m;
                    }
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Array<T>>], v: Var) -> &'g mut [T] {
        grads[v.0]
            .get_or_insert_with(|| Array::zeros(self.nodes[v.0].value.shape()))
            .data_mut()
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
    params: Vec<Option<Var>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Array<T>> {
        self.params.get(id.index()).copied().flatten().and_then(|v| self.wrt(v))
    }

    /// One gradient per stored parameter; unreached parameters get zeros.
    pub fn for_store(&self, store: &ParamStore<T>) -> Vec<Array<T>> {
        store
            .ids()
            .map(|id| {
                self.param(id)
                    .cloned()
                    .unwrap_or_else(|| Array::zeros(store.get(id).shape()))
            })
            .collect()
    }
}
