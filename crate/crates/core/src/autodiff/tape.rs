//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every op appends a node holding its forward value; node indices are a
//! topological order, so the backward sweep simply walks the tape in reverse.

use std::sync::Arc;

use rand::Rng;

use super::kernels::{gemm_nt_acc, gemm_tn_acc, matmul};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Sentinel in gather index maps meaning "write zero".
pub const PAD: usize = usize::MAX;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Gelu,
    Relu,
    Exp,
    Square,
    /// `(2/π)·atan(1/x)`, the Watson orientation-dispersion map.
    OrientationDispersion,
}

impl Unary {
    fn value<T: Real>(self, x: T) -> T {
        match self {
            Unary::Gelu => x * normal_cdf(x),
            Unary::Relu => x.max(T::zero()),
            Unary::Exp => x.exp(),
            Unary::Square => x * x,
            Unary::OrientationDispersion => {
                if x <= T::zero() {
                    T::one()
                } else {
                    T::FRAC_2_PI() * x.recip().atan()
                }
            }
        }
    }

    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Gelu => {
                let pdf = (-(x * x) / T::of(2.0)).exp() / (T::TAU()).sqrt();
                normal_cdf(x) + x * pdf
            }
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Exp => y,
            Unary::Square => T::of(2.0) * x,
            Unary::OrientationDispersion => -T::FRAC_2_PI() / (T::one() + x * x),
        }
    }
}

fn normal_cdf<T: Real>(x: T) -> T {
    T::of(0.5) * (T::one() + (x / T::SQRT_2()).erf())
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    DivCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Unary(Var, Unary),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SoftmaxRows(Var),
    Mask(Var, Vec<T>),
    Gather(Var, Arc<Vec<usize>>),
    ConcatCols(Vec<Var>),
    RowSum(Var),
    SumAll(Var),
    Transpose(Var),
    Attention {
        qkv: Var,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Gradients of a scalar root with respect to every tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; zeros when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

/// Recording tape. One tape per forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    training: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            training: false,
        }
    }

    /// Training mode enables dropout.
    pub fn training(mut self, on: bool) -> Self {
        self.training = on;
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (a parameter or an input whose gradient is wanted).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, k2, n) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(dim_err("matmul", ta.shape(), tb.shape()));
        }
        let out = matmul(ta.data(), tb.data(), m, k, n);
        let t = self.tracked(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), t))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "add", |x, y| x + y)?;
        let t = self.tracked(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "sub", |x, y| x - y)?;
        let t = self.tracked(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "mul", |x, y| x * y)?;
        let t = self.tracked(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), t))
    }

    fn row_broadcast(&mut self, a: Var, row: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        if tr.len() != c {
            return Err(dim_err(name, ta.shape(), tr.shape()));
        }
        let r = tr.data();
        let data = ta
            .data()
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// `a[n×d] + row[d]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.row_broadcast(a, row, "add_row", |x, y| x + y)?;
        let t = self.tracked(&[a, row]);
        Ok(self.push(v, Op::AddRow(a, row), t))
    }

    /// `a[n×d] ⊙ row[d]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.row_broadcast(a, row, "mul_row", |x, y| x * y)?;
        let t = self.tracked(&[a, row]);
        Ok(self.push(v, Op::MulRow(a, row), t))
    }

    /// `a[n×d] / s[n×1]`, dividing each row by its own scalar.
    pub fn div_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        let (r, c) = (ta.rows(), ta.cols());
        if ts.len() != r {
            return Err(dim_err("div_col", ta.shape(), ts.shape()));
        }
        let mut data = ta.data().to_vec();
        for (i, chunk) in data.chunks_mut(c).enumerate() {
            let d = ts.data()[i];
            for v in chunk {
                *v /= d;
            }
        }
        let t = self.tracked(&[a, s]);
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(v, Op::DivCol(a, s), t))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).map(|x| x * k);
        let t = self.tracked(&[a]);
        self.push(v, Op::Scale(a, k), t)
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).map(|x| x + k);
        let t = self.tracked(&[a]);
        self.push(v, Op::AddScalar(a), t)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let v = self.value(a).map(|x| kind.value(x));
        let t = self.tracked(&[a]);
        self.push(v, Op::Unary(a, kind), t)
    }

    /// Exact-erf GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Gelu)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    /// Per-row standardization followed by the affine `gain`, `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        if eps <= T::zero() {
            return Err(Error::Parameter("layer_norm eps must be positive".into()));
        }
        let tx = self.value(x);
        let (r, d) = (tx.rows(), tx.cols());
        let (g, b) = (self.value(gain), self.value(bias));
        if g.len() != d || b.len() != d {
            return Err(dim_err("layer_norm", tx.shape(), g.shape()));
        }
        let dn = T::of(d as f64);
        let mut xhat = vec![T::zero(); r * d];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * d];
        for i in 0..r {
            let row = tx.row_slice(i);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = (var + eps).sqrt().recip();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let v = Tensor::new(tx.shape().to_vec(), out)?;
        let t = self.tracked(&[x, gain, bias]);
        Ok(self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            t,
        ))
    }

    /// Row-wise softmax, computed after subtracting each row's maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let c = tx.cols();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let v = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        let t = self.tracked(&[x]);
        self.push(v, Op::SoftmaxRows(x), t)
    }

    /// Hard threshold. `nonneg = false` zeroes `|x| < λ`; `nonneg = true`
    /// zeroes `x < λ`. Survivors pass through unchanged, and so does their gradient.
    pub fn hard_threshold(&mut self, x: Var, lambda: T, nonneg: bool) -> Result<Var> {
        if !(lambda > T::zero()) {
            return Err(Error::Parameter(format!(
                "threshold must be positive, got {lambda}"
            )));
        }
        let keep: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| {
                let kept = if nonneg { v >= lambda } else { v.abs() >= lambda };
                if kept {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        Ok(self.mask(x, keep))
    }

    /// Inverted dropout; identity outside training mode or when `rate == 0`.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: T, rng: &mut R) -> Var {
        if !self.training || rate <= T::zero() {
            return x;
        }
        let keep = T::one() - rate;
        let scale = keep.recip();
        let p = keep.as_f64();
        let mask = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { scale } else { T::zero() })
            .collect();
        self.mask(x, mask)
    }

    fn mask(&mut self, x: Var, mask: Vec<T>) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let v = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        let t = self.tracked(&[x]);
        self.push(v, Op::Mask(x, mask), t)
    }

    /// `out.flat[i] = x.flat[index[i]]`, or zero where `index[i] == PAD`.
    pub fn gather(&mut self, x: Var, shape: Vec<usize>, index: Arc<Vec<usize>>) -> Result<Var> {
        let tx = self.value(x);
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(Error::Dimension(format!(
                "gather: shape {shape:?} vs {} indices",
                index.len()
            )));
        }
        let src = tx.data();
        let mut data = Vec::with_capacity(n);
        for &i in index.iter() {
            if i == PAD {
                data.push(T::zero());
            } else if i < src.len() {
                data.push(src[i]);
            } else {
                return Err(Error::Dimension(format!(
                    "gather index {i} out of range {}",
                    src.len()
                )));
            }
        }
        let v = Tensor::new(shape, data)?;
        let t = self.tracked(&[x]);
        Ok(self.push(v, Op::Gather(x, index), t))
    }

    /// Columns `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        if len == 0 || start + len > c {
            return Err(Error::Dimension(format!(
                "slice_cols [{start}, {}) of {c} columns",
                start + len
            )));
        }
        let index = (0..r)
            .flat_map(|i| (start..start + len).map(move |j| i * c + j))
            .collect();
        self.gather(x, vec![r, len], Arc::new(index))
    }

    /// Selected rows of a matrix, in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.cols();
        let index = rows
            .iter()
            .flat_map(|&i| (0..c).map(move |j| i * c + j))
            .collect();
        self.gather(x, vec![rows.len(), c], Arc::new(index))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.rows() != r {
                return Err(dim_err("concat_cols", self.shape(parts[0]), tp.shape()));
            }
            total += tp.cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let v = Tensor::matrix(r, total, data)?;
        let t = self.tracked(parts);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), t))
    }

    /// `[n×d] → [n×1]`
    pub fn row_sum(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = (0..tx.rows()).map(|i| tx.row_slice(i).iter().copied().sum()).collect();
        let v = Tensor::column(data);
        let t = self.tracked(&[x]);
        self.push(v, Op::RowSum(x), t)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let t = self.tracked(&[x]);
        self.push(v, Op::SumAll(x), t)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::of(self.value(x).len() as f64);
        let s = self.sum(x);
        self.scale(s, n.recip())
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        let t = self.tracked(&[x]);
        self.push(v, Op::Transpose(x), t)
    }

    /// Elementwise clamp into `[lo, hi]`; gradient passes only where unclamped.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let mask: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v >= lo && v <= hi { T::one() } else { T::zero() })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| v.max(lo).min(hi)).collect();
        let v = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        let t = self.tracked(&[x]);
        self.push(v, Op::Mask(x, mask), t)
    }

    /// Multi-head scaled dot-product self-attention over consecutive
    /// sequences of `seq` rows. `qkv` is `[B·seq × 3D]` laid out as
    /// `[q | k | v]`; head `h` owns columns `h·D/heads..(h+1)·D/heads` of each block.
    pub fn attention(&mut self, qkv: Var, seq: usize, heads: usize) -> Result<Var> {
        let tq = self.value(qkv);
        let (rows, c3) = (tq.rows(), tq.cols());
        if seq == 0 || rows % seq != 0 || c3 % 3 != 0 || (c3 / 3) % heads != 0 {
            return Err(Error::Dimension(format!(
                "attention: {rows}×{c3} with seq {seq}, heads {heads}"
            )));
        }
        let d = c3 / 3;
        let dh = d / heads;
        let batch = rows / seq;
        let scale = T::of(dh as f64).sqrt().recip();
        let src = tq.data();
        let mut out = vec![T::zero(); rows * d];
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                for i in 0..seq {
                    let qi = &src[(b * seq + i) * c3 + h * dh..][..dh];
                    for j in 0..seq {
                        let kj = &src[(b * seq + j) * c3 + d + h * dh..][..dh];
                        p[i * seq + j] = super::kernels::dot(qi, kj) * scale;
                    }
                    softmax_in_place(&mut p[i * seq..(i + 1) * seq]);
                    let orow = &mut out[(b * seq + i) * d + h * dh..][..dh];
                    for j in 0..seq {
                        let w = p[i * seq + j];
                        let vj = &src[(b * seq + j) * c3 + 2 * d + h * dh..][..dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += w * vv;
                        }
                    }
                }
            }
        }
        let v = Tensor::matrix(rows, d, out)?;
        let t = self.tracked(&[qkv]);
        Ok(self.push(
            v,
            Op::Attention {
                qkv,
                seq,
                heads,
                probs,
            },
            t,
        ))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rv.shape(), T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let tracked = |v: Var| self.nodes[v.0].tracked;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if tracked(*a) {
                    let ga = acc_slot(grads, *a, ta.shape());
                    gemm_nt_acc(gd, tb.data(), ga, m, k, n);
                }
                if tracked(*b) {
                    let gb = acc_slot(grads, *b, tb.shape());
                    gemm_tn_acc(ta.data(), gd, gb, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if tracked(v) {
                        add_into(acc_slot(grads, v, g.shape()), gd, T::one());
                    }
                }
            }
            Op::Sub(a, b) => {
                if tracked(*a) {
                    add_into(acc_slot(grads, *a, g.shape()), gd, T::one());
                }
                if tracked(*b) {
                    add_into(acc_slot(grads, *b, g.shape()), gd, -T::one());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if tracked(*a) {
                    let s = acc_slot(grads, *a, g.shape());
                    for ((o, &gg), &y) in s.iter_mut().zip(gd).zip(vb) {
                        *o += gg * y;
                    }
                }
                if tracked(*b) {
                    let s = acc_slot(grads, *b, g.shape());
                    for ((o, &gg), &x) in s.iter_mut().zip(gd).zip(va) {
                        *o += gg * x;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if tracked(*a) {
                    add_into(acc_slot(grads, *a, g.shape()), gd, T::one());
                }
                if tracked(*row) {
                    let shape = self.shape(*row).to_vec();
                    let s = acc_slot(grads, *row, &shape);
                    for chunk in gd.chunks(s.len()) {
                        add_into(s, chunk, T::one());
                    }
                }
            }
            Op::MulRow(a, row) => {
                let ra = self.value(*row).data();
                let va = self.value(*a).data();
                let c = ra.len();
                if tracked(*a) {
                    let s = acc_slot(grads, *a, g.shape());
                    for (i, o) in s.iter_mut().enumerate() {
                        *o += gd[i] * ra[i % c];
                    }
                }
                if tracked(*row) {
                    let shape = self.shape(*row).to_vec();
                    let s = acc_slot(grads, *row, &shape);
                    for (i, (&gg, &x)) in gd.iter().zip(va).enumerate() {
                        s[i % c] += gg * x;
                    }
                }
            }
            Op::DivCol(a, sv) => {
                let c = g.cols();
                let dv = self.value(*sv).data();
                let out = node.value.data();
                if tracked(*a) {
                    let s = acc_slot(grads, *a, g.shape());
                    for (i, o) in s.iter_mut().enumerate() {
                        *o += gd[i] / dv[i / c];
                    }
                }
                if tracked(*sv) {
                    let shape = self.shape(*sv).to_vec();
                    let s = acc_slot(grads, *sv, &shape);
                    for (i, (&gg, &y)) in gd.iter().zip(out).enumerate() {
                        s[i / c] -= gg * y / dv[i / c];
                    }
                }
            }
            Op::Scale(a, k) => {
                if tracked(*a) {
                    add_into(acc_slot(grads, *a, g.shape()), gd, *k);
                }
            }
            Op::AddScalar(a) => {
                if tracked(*a) {
                    add_into(acc_slot(grads, *a, g.shape()), gd, T::one());
                }
            }
            Op::Unary(a, kind) => {
                if tracked(*a) {
                    let x = self.value(*a).data();
                    let y = node.value.data();
                    let s = acc_slot(grads, *a, g.shape());
                    for i in 0..s.len() {
                        s[i] += gd[i] * kind.derivative(x[i], y[i]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = g.cols();
                let r = g.rows();
                let gv = self.value(*gain).data();
                if tracked(*gain) {
                    let shape = self.shape(*gain).to_vec();
                    let s = acc_slot(grads, *gain, &shape);
                    for i in 0..r * d {
                        s[i % d] += gd[i] * xhat[i];
                    }
                }
                if tracked(*bias) {
                    let shape = self.shape(*bias).to_vec();
                    let s = acc_slot(grads, *bias, &shape);
                    for i in 0..r * d {
                        s[i % d] += gd[i];
                    }
                }
                if tracked(*x) {
                    let s = acc_slot(grads, *x, g.shape());
                    let dn = T::of(d as f64);
                    for i in 0..r {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gd[i * d + j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[i * d + j];
                        }
                        for j in 0..d {
                            let dh = gd[i * d + j] * gv[j];
                            s[i * d + j] += inv_std[i] / dn
                                * (dn * dh - sum_dh - xhat[i * d + j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                if tracked(*x) {
                    let c = g.cols();
                    let y = node.value.data();
                    let s = acc_slot(grads, *x, g.shape());
                    for (i, (yr, gr)) in y.chunks(c).zip(gd.chunks(c)).enumerate() {
                        let dotp: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            s[i * c + j] += yr[j] * (gr[j] - dotp);
                        }
                    }
                }
            }
            Op::Mask(x, mask) => {
                if tracked(*x) {
                    let s = acc_slot(grads, *x, g.shape());
                    for ((o, &gg), &m) in s.iter_mut().zip(gd).zip(mask) {
                        *o += gg * m;
                    }
                }
            }
            Op::Gather(x, index) => {
                if tracked(*x) {
                    let shape = self.shape(*x).to_vec();
                    let s = acc_slot(grads, *x, &shape);
                    for (&i, &gg) in index.iter().zip(gd) {
                        if i != PAD {
                            s[i] += gg;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let r = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if tracked(p) {
                        let shape = self.shape(p).to_vec();
                        let s = acc_slot(grads, p, &shape);
                        for i in 0..r {
                            add_into(
                                &mut s[i * c..(i + 1) * c],
                                &gd[i * total + offset..i * total + offset + c],
                                T::one(),
                            );
                        }
                    }
                    offset += c;
                }
            }
            Op::RowSum(x) => {
                if tracked(*x) {
                    let shape = self.shape(*x).to_vec();
                    let c = *shape.last().unwrap();
                    let s = acc_slot(grads, *x, &shape);
                    for (i, o) in s.iter_mut().enumerate() {
                        *o += gd[i / c];
                    }
                }
            }
            Op::SumAll(x) => {
                if tracked(*x) {
                    let shape = self.shape(*x).to_vec();
                    let s = acc_slot(grads, *x, &shape);
                    for o in s.iter_mut() {
                        *o += gd[0];
                    }
                }
            }
            Op::Transpose(x) => {
                if tracked(*x) {
                    let gt = g.transpose();
                    let shape = self.shape(*x).to_vec();
                    add_into(acc_slot(grads, *x, &shape), gt.data(), T::one());
                }
            }
            Op::Attention {
                qkv,
                seq,
                heads,
                probs,
            } => {
                if tracked(*qkv) {
                    self.attention_backward(*qkv, *seq, *heads, probs, gd, grads);
                }
            }
        }
        Ok(())
    }

    fn attention_backward(
        &self,
        qkv: Var,
        seq: usize,
        heads: usize,
        probs: &[T],
        gd: &[T],
        grads: &mut [Option<Tensor<T>>],
    ) {
        let tq = self.value(qkv);
        let (rows, c3) = (tq.rows(), tq.cols());
        let d = c3 / 3;
        let dh = d / heads;
        let batch = rows / seq;
        let scale = T::of(dh as f64).sqrt().recip();
        let src = tq.data();
        let shape = tq.shape().to_vec();
        let s = acc_slot(grads, qkv, &shape);
        let mut dp = vec![T::zero(); seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                // dP = dO · Vᵀ, dV += Pᵀ · dO
                for i in 0..seq {
                    let go = &gd[(b * seq + i) * d + h * dh..][..dh];
                    for j in 0..seq {
                        let vj = &src[(b * seq + j) * c3 + 2 * d + h * dh..][..dh];
                        dp[i * seq + j] = super::kernels::dot(go, vj);
                        let w = p[i * seq + j];
                        let dv = &mut s[(b * seq + j) * c3 + 2 * d + h * dh..][..dh];
                        for (o, &gg) in dv.iter_mut().zip(go) {
                            *o += w * gg;
                        }
                    }
                }
                // dS = P ⊙ (dP − rowsum(dP ⊙ P)), then dQ = dS·K·scale, dK = dSᵀ·Q·scale
                for i in 0..seq {
                    let pr = &p[i * seq..(i + 1) * seq];
                    let dr = &dp[i * seq..(i + 1) * seq];
                    let dotp: T = pr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                    for j in 0..seq {
                        let ds = pr[j] * (dr[j] - dotp) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let qi_off = (b * seq + i) * c3 + h * dh;
                        let kj_off = (b * seq + j) * c3 + d + h * dh;
                        for t in 0..dh {
                            let kv = src[kj_off + t];
                            let qv = src[qi_off + t];
                            s[qi_off + t] += ds * kv;
                            s[kj_off + t] += ds * qv;
                        }
                    }
                }
            }
        }
    }
}

fn acc_slot<'a, T: Real>(grads: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut [T] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}

fn add_into<T: Real>(dst: &mut [T], src: &[T], k: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}
