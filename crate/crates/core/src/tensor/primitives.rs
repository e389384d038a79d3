//! Forward and backward rules for every graph primitive.

use super::kernels::{self, gemm};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A differentiable primitive together with its attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// `[m,k]·[k,n]`, or `[m,k]·[n,k]ᵀ` with `trans_b`.
    MatMul { trans_b: bool },
    /// Elementwise; the smaller operand may broadcast over leading axes.
    Add,
    /// Elementwise; broadcasting as for `Add`.
    Mul,
    /// `x: [B, C_in, L]`, `w: [C_out, C_in, W]` → `[B, C_out, (L-W)/stride+1]`.
    Conv1d { stride: usize },
    /// Normalizes the last axis; inputs `(x, gamma, beta)`.
    LayerNorm { eps: f64 },
    /// Over the last axis; `log` yields log-softmax.
    Softmax { log: bool },
    /// Tanh approximation.
    Gelu,
    /// `log` yields log-sigmoid.
    Sigmoid { log: bool },
    /// Mean over one axis, or over everything (result shape `[1]`).
    MeanPool { axis: Option<usize> },
    Concat { axis: usize },
    IndexSelect { axis: usize, indices: Vec<usize> },
    /// `(base, src)`: rows of `base` (axis 0) at `indices` replaced by `src`.
    Scatter { indices: Vec<usize> },
    /// Last axis `T` → `[K, 2]` interleaved complex bins, `K = T/2 + 1`.
    Rfft,
    /// `[..., K, 2]` → `[..., n]`.
    Irfft { n: usize },
    /// Row-wise cosine similarity matrix `[B1, d] × [B2, d] → [B1, B2]`.
    CosineSimilarity,
    Scale { factor: f64 },
    Reshape { shape: Vec<usize> },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul { .. } => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Conv1d { .. } => "conv1d",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::Softmax { .. } => "softmax",
            Primitive::Gelu => "gelu",
            Primitive::Sigmoid { .. } => "sigmoid",
            Primitive::MeanPool { .. } => "mean_pool",
            Primitive::Concat { .. } => "concat",
            Primitive::IndexSelect { .. } => "index_select",
            Primitive::Scatter { .. } => "scatter",
            Primitive::Rfft => "rfft",
            Primitive::Irfft { .. } => "irfft",
            Primitive::CosineSimilarity => "cosine_similarity",
            Primitive::Scale { .. } => "scale",
            Primitive::Reshape { .. } => "reshape",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul { .. }
            | Primitive::Add
            | Primitive::Mul
            | Primitive::Conv1d { .. }
            | Primitive::Scatter { .. }
            | Primitive::CosineSimilarity => Some(2),
            Primitive::LayerNorm { .. } => Some(3),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

/// Activations kept from the forward pass beyond inputs and output.
pub(crate) enum Saved<T> {
    None,
    LayerNorm { xhat: Vec<T>, rstd: Vec<T> },
    Cosine { inv_na: Vec<T>, inv_nb: Vec<T> },
}

fn c<T: Scalar>(v: f64) -> T {
    T::lit(v)
}

/// Number of times `small` repeats inside `big` when it is a trailing suffix.
fn suffix_reps(big: &[usize], small: &[usize]) -> Option<usize> {
    if small.len() > big.len() || big[big.len() - small.len()..] != *small {
        return None;
    }
    Some(big[..big.len() - small.len()].iter().product())
}

enum Broadcast {
    Same,
    /// Second operand repeats over the first.
    Right,
    /// First operand repeats over the second.
    Left,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if suffix_reps(a, b).is_some() {
        return Ok(Broadcast::Right);
    }
    if suffix_reps(b, a).is_some() {
        return Ok(Broadcast::Left);
    }
    Err(Error::shape(op, format!("{a:?} and {b:?} are not broadcast-compatible")))
}

/// `(outer, axis_len, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (shape[..axis].iter().product(), shape[axis], shape[axis + 1..].iter().product())
}

fn last_dim(op: &'static str, shape: &[usize]) -> Result<usize> {
    match shape.last() {
        Some(&d) if d > 0 => Ok(d),
        _ => Err(Error::shape(op, format!("needs a non-empty last axis, got {shape:?}"))),
    }
}

fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    let k = T::lit(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::lit(0.044_715);
    let (half, one, three) = (T::lit(0.5), T::one(), T::lit(3.0));
    let x2 = x * x;
    let t = one - (one + one) / (one + (k * (x + a * x2 * x) * (one + one)).exp());
    let y = half * x * (one + t);
    let dy = half * (one + t) + half * x * (one - t * t) * k * (one + three * a * x2);
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn forward<T: Scalar>(prim: &Primitive, inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, Saved<T>)> {
    let op = prim.name();
    match prim.arity() {
        Some(n) if n != inputs.len() => {
            return Err(Error::shape(op, format!("expects {n} inputs, got {}", inputs.len())));
        }
        None if inputs.is_empty() => return Err(Error::shape(op, "expects at least one input")),
        _ => {}
    }
    let out = match prim {
        Primitive::MatMul { trans_b } => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 {
                return Err(Error::shape(op, format!("needs 2-D operands, got {:?} and {:?}", a.shape(), b.shape())));
            }
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (kb, n) = if *trans_b { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
            if k != kb {
                return Err(Error::shape(op, format!("inner dims {k} vs {kb} ({:?} x {:?})", a.shape(), b.shape())));
            }
            let mut out = vec![T::zero(); m * n];
            let bs = (b.shape()[0], b.shape()[1]);
            gemm(a.data(), (m, k), false, b.data(), bs, *trans_b, &mut out, false);
            Tensor::from_parts(vec![m, n], out)
        }
        Primitive::Add | Primitive::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let mul = matches!(prim, Primitive::Mul);
            let f = |x: T, y: T| if mul { x * y } else { x + y };
            match broadcast(op, a.shape(), b.shape())? {
                Broadcast::Same => Tensor::from_parts(
                    a.shape().to_vec(),
                    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
                ),
                Broadcast::Right => {
                    let small = b.data();
                    let out = a.data().chunks_exact(small.len()).flat_map(|ch| ch.iter().zip(small).map(|(&x, &y)| f(x, y)));
                    Tensor::from_parts(a.shape().to_vec(), out.collect())
                }
                Broadcast::Left => {
                    let small = a.data();
                    let out = b.data().chunks_exact(small.len()).flat_map(|ch| small.iter().zip(ch).map(|(&x, &y)| f(x, y)));
                    Tensor::from_parts(b.shape().to_vec(), out.collect())
                }
            }
        }
        Primitive::Conv1d { stride } => {
            let (x, w) = (inputs[0], inputs[1]);
            let geo = ConvGeometry::new(x.shape(), w.shape(), *stride)?;
            let cols = geo.im2col(x.data());
            let mut out_t = vec![T::zero(); geo.batch * geo.l_out * geo.c_out];
            gemm(&cols, (geo.batch * geo.l_out, geo.patch()), false, w.data(), (geo.c_out, geo.patch()), true, &mut out_t, false);
            Tensor::from_parts(vec![geo.batch, geo.c_out, geo.l_out], geo.from_rows(&out_t))
        }
        Primitive::LayerNorm { eps } => {
            let (x, gamma, beta) = (inputs[0], inputs[1], inputs[2]);
            let d = last_dim(op, x.shape())?;
            if gamma.shape() != [d] || beta.shape() != [d] {
                return Err(Error::shape(op, format!("gamma {:?} / beta {:?} must be [{d}]", gamma.shape(), beta.shape())));
            }
            let rows = x.numel() / d;
            let mut xhat = vec![T::zero(); x.numel()];
            let mut rstd = vec![T::zero(); rows];
            let mut out = vec![T::zero(); x.numel()];
            let inv_d = c::<T>(1.0 / d as f64);
            for r in 0..rows {
                let row = &x.data()[r * d..(r + 1) * d];
                let mean = row.iter().fold(T::zero(), |s, &v| s + v) * inv_d;
                let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) * inv_d;
                let rs = T::one() / (var + c(*eps)).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (row[j] - mean) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * gamma.data()[j] + beta.data()[j];
                }
            }
            return Ok((Tensor::from_parts(x.shape().to_vec(), out), Saved::LayerNorm { xhat, rstd }));
        }
        Primitive::Softmax { log } => {
            let x = inputs[0];
            let d = last_dim(op, x.shape())?;
            let mut out = vec![T::zero(); x.numel()];
            for (row, o) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut sum = T::zero();
                for (oj, &v) in o.iter_mut().zip(row) {
                    *oj = (v - max).exp();
                    sum = sum + *oj;
                }
                if *log {
                    let lse = max + sum.ln();
                    for (oj, &v) in o.iter_mut().zip(row) {
                        *oj = v - lse;
                    }
                } else {
                    let inv = T::one() / sum;
                    for oj in o.iter_mut() {
                        *oj = *oj * inv;
                    }
                }
            }
            Tensor::from_parts(x.shape().to_vec(), out)
        }
        Primitive::Gelu => inputs[0].map(|v| gelu_parts(v).0),
        Primitive::Sigmoid { log } => {
            if *log {
                inputs[0].map(|v| {
                    let x = v.as_f64();
                    c(x.min(0.0) - (-x.abs()).exp().ln_1p())
                })
            } else {
                inputs[0].map(|v| c(sigmoid(v.as_f64())))
            }
        }
        Primitive::MeanPool { axis } => {
            let x = inputs[0];
            match axis {
                None => {
                    if x.numel() == 0 {
                        return Err(Error::shape(op, "mean of empty tensor"));
                    }
                    let s = x.data().iter().fold(T::zero(), |s, &v| s + v);
                    Tensor::scalar(s / c(x.numel() as f64))
                }
                Some(axis) => {
                    let axis = *axis;
                    if axis >= x.shape().len() || x.shape()[axis] == 0 {
                        return Err(Error::shape(op, format!("axis {axis} invalid for {:?}", x.shape())));
                    }
                    let (outer, len, inner) = split_axis(x.shape(), axis);
                    let mut out = vec![T::zero(); outer * inner];
                    let inv = c::<T>(1.0 / len as f64);
                    for o in 0..outer {
                        let dst = &mut out[o * inner..(o + 1) * inner];
                        for a in 0..len {
                            let src = &x.data()[(o * len + a) * inner..(o * len + a + 1) * inner];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                        for d in dst.iter_mut() {
                            *d = *d * inv;
                        }
                    }
                    let mut shape = x.shape().to_vec();
                    shape.remove(axis);
                    if shape.is_empty() {
                        shape.push(1);
                    }
                    Tensor::from_parts(shape, out)
                }
            }
        }
        Primitive::Concat { axis } => {
            let axis = *axis;
            let first = inputs[0].shape();
            if axis >= first.len() {
                return Err(Error::shape(op, format!("axis {axis} invalid for {first:?}")));
            }
            for t in inputs {
                let s = t.shape();
                let compatible = s.len() == first.len()
                    && s.iter().zip(first).enumerate().all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(Error::shape(op, format!("{s:?} incompatible with {first:?} along axis {axis}")));
                }
            }
            let (outer, _, inner) = split_axis(first, axis);
            let total: usize = inputs.iter().map(|t| t.shape()[axis]).sum();
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for t in inputs {
                    let len = t.shape()[axis];
                    out.extend_from_slice(&t.data()[o * len * inner..(o + 1) * len * inner]);
                }
            }
            let mut shape = first.to_vec();
            shape[axis] = total;
            Tensor::from_parts(shape, out)
        }
        Primitive::IndexSelect { axis, indices } => {
            let (x, axis) = (inputs[0], *axis);
            if axis >= x.shape().len() {
                return Err(Error::shape(op, format!("axis {axis} invalid for {:?}", x.shape())));
            }
            let (outer, len, inner) = split_axis(x.shape(), axis);
            if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
                return Err(Error::shape(op, format!("index {bad} out of range for axis of size {len}")));
            }
            let mut out = Vec::with_capacity(outer * indices.len() * inner);
            for o in 0..outer {
                for &i in indices {
                    out.extend_from_slice(&x.data()[(o * len + i) * inner..(o * len + i + 1) * inner]);
                }
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = indices.len();
            Tensor::from_parts(shape, out)
        }
        Primitive::Scatter { indices } => {
            let (base, src) = (inputs[0], inputs[1]);
            let (bs, ss) = (base.shape(), src.shape());
            if bs.is_empty() || ss.len() != bs.len() || bs[1..] != ss[1..] || ss[0] != indices.len() {
                return Err(Error::shape(op, format!("base {bs:?}, src {ss:?}, {} indices", indices.len())));
            }
            let mut seen = vec![false; bs[0]];
            for &i in indices {
                if i >= bs[0] || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidAttr { op, detail: format!("index {i} out of range or repeated") });
                }
            }
            let row: usize = bs[1..].iter().product();
            let mut out = base.data().to_vec();
            for (j, &i) in indices.iter().enumerate() {
                out[i * row..(i + 1) * row].copy_from_slice(&src.data()[j * row..(j + 1) * row]);
            }
            Tensor::from_parts(bs.to_vec(), out)
        }
        Primitive::Rfft => {
            let x = inputs[0];
            let n = last_dim(op, x.shape())?;
            let mut shape = x.shape().to_vec();
            shape.pop();
            shape.push(kernels::bins(n));
            shape.push(2);
            Tensor::from_parts(shape, kernels::rfft_rows(x.data(), n))
        }
        Primitive::Irfft { n } => {
            let x = inputs[0];
            let s = x.shape();
            if *n == 0 || s.len() < 2 || s[s.len() - 1] != 2 || s[s.len() - 2] != kernels::bins(*n) {
                return Err(Error::shape(op, format!("input {s:?} is not [..., {}, 2] for n={n}", kernels::bins(*n))));
            }
            let mut shape = s[..s.len() - 2].to_vec();
            shape.push(*n);
            Tensor::from_parts(shape, kernels::irfft_rows(x.data(), *n))
        }
        Primitive::CosineSimilarity => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[1] {
                return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            let d = a.shape()[1];
            let inv_norms = |t: &Tensor<T>, input: usize| -> Result<Vec<T>> {
                t.data()
                    .chunks_exact(d)
                    .enumerate()
                    .map(|(row, r)| {
                        let n = r.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
                        if n == T::zero() {
                            Err(Error::ZeroNorm { op, input, row })
                        } else {
                            Ok(T::one() / n)
                        }
                    })
                    .collect()
            };
            let inv_na = inv_norms(a, 0)?;
            let inv_nb = inv_norms(b, 1)?;
            let (m, n) = (a.shape()[0], b.shape()[0]);
            let mut out = vec![T::zero(); m * n];
            gemm(a.data(), (m, d), false, b.data(), (n, d), true, &mut out, false);
            for i in 0..m {
                for j in 0..n {
                    out[i * n + j] = out[i * n + j] * inv_na[i] * inv_nb[j];
                }
            }
            return Ok((Tensor::from_parts(vec![m, n], out), Saved::Cosine { inv_na, inv_nb }));
        }
        Primitive::Scale { factor } => {
            let f = c::<T>(*factor);
            inputs[0].map(|v| v * f)
        }
        Primitive::Reshape { shape } => inputs[0].reshape(shape)?,
    };
    Ok((out, Saved::None))
}

struct ConvGeometry {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    width: usize,
    stride: usize,
    l_out: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], w: &[usize], stride: usize) -> Result<Self> {
        let op = "conv1d";
        if x.len() != 3 || w.len() != 3 {
            return Err(Error::shape(op, format!("x {x:?} must be [B,C_in,L], w {w:?} must be [C_out,C_in,W]")));
        }
        if stride == 0 {
            return Err(Error::InvalidAttr { op, detail: "stride must be positive".into() });
        }
        if x[1] != w[1] {
            return Err(Error::shape(op, format!("input channels {} vs kernel channels {}", x[1], w[1])));
        }
        if w[2] == 0 || w[2] > x[2] {
            return Err(Error::shape(op, format!("kernel width {} vs input length {}", w[2], x[2])));
        }
        Ok(Self {
            batch: x[0],
            c_in: x[1],
            len: x[2],
            c_out: w[0],
            width: w[2],
            stride,
            l_out: (x[2] - w[2]) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.width
    }

    /// `[B·L_out, C_in·W]` matrix of receptive fields.
    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut cols = Vec::with_capacity(self.batch * self.l_out * self.patch());
        for b in 0..self.batch {
            for o in 0..self.l_out {
                for ci in 0..self.c_in {
                    let start = (b * self.c_in + ci) * self.len + o * self.stride;
                    cols.extend_from_slice(&x[start..start + self.width]);
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.batch * self.c_in * self.len];
        let p = self.patch();
        for b in 0..self.batch {
            for o in 0..self.l_out {
                let row = &cols[(b * self.l_out + o) * p..(b * self.l_out + o + 1) * p];
                for ci in 0..self.c_in {
                    let start = (b * self.c_in + ci) * self.len + o * self.stride;
                    for (dst, &v) in x[start..start + self.width].iter_mut().zip(&row[ci * self.width..]) {
                        *dst = *dst + v;
                    }
                }
            }
        }
        x
    }

    /// `[B·L_out, C_out]` → `[B, C_out, L_out]`.
    fn from_rows<T: Scalar>(&self, rows: &[T]) -> Vec<T> {
        if self.l_out == 1 {
            return rows.to_vec();
        }
        let mut out = vec![T::zero(); rows.len()];
        for b in 0..self.batch {
            for o in 0..self.l_out {
                for co in 0..self.c_out {
                    out[(b * self.c_out + co) * self.l_out + o] = rows[(b * self.l_out + o) * self.c_out + co];
                }
            }
        }
        out
    }

    fn to_rows<T: Scalar>(&self, g: &[T]) -> Vec<T> {
        if self.l_out == 1 {
            return g.to_vec();
        }
        let mut rows = vec![T::zero(); g.len()];
        for b in 0..self.batch {
            for o in 0..self.l_out {
                for co in 0..self.c_out {
                    rows[(b * self.l_out + o) * self.c_out + co] = g[(b * self.c_out + co) * self.l_out + o];
                }
            }
        }
        rows
    }
}

fn reduce_reps<T: Scalar>(g: &[T], small_len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); small_len];
    for ch in g.chunks_exact(small_len) {
        for (o, &v) in out.iter_mut().zip(ch) {
            *o = *o + v;
        }
    }
    out
}

/// Vector-Jacobian products for each input flagged in `needs`.
pub(crate) fn backward<T: Scalar>(
    prim: &Primitive,
    inputs: &[&Tensor<T>],
    out: &Tensor<T>,
    saved: &Saved<T>,
    g: &Tensor<T>,
    needs: &[bool],
) -> Vec<Option<Tensor<T>>> {
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; inputs.len()];
    let gd = g.data();
    match prim {
        Primitive::MatMul { trans_b } => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let bs = (b.shape()[0], b.shape()[1]);
            let n = out.shape()[1];
            if needs[0] {
                // dA = G · op(B)ᵀ
                let mut da = vec![T::zero(); m * k];
                gemm(gd, (m, n), false, b.data(), bs, !*trans_b, &mut da, false);
                grads[0] = Some(Tensor::from_parts(a.shape().to_vec(), da));
            }
            if needs[1] {
                let mut db = vec![T::zero(); b.numel()];
                if *trans_b {
                    // B is [n,k]: dB = Gᵀ · A
                    gemm(gd, (m, n), true, a.data(), (m, k), false, &mut db, false);
                } else {
                    gemm(a.data(), (m, k), true, gd, (m, n), false, &mut db, false);
                }
                grads[1] = Some(Tensor::from_parts(b.shape().to_vec(), db));
            }
        }
        Primitive::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            let full = |t: &Tensor<T>| Tensor::from_parts(t.shape().to_vec(), gd.to_vec());
            let reduced = |t: &Tensor<T>| Tensor::from_parts(t.shape().to_vec(), reduce_reps(gd, t.numel()));
            let (a_bcast, b_bcast) = match broadcast("add", a.shape(), b.shape()).expect("checked in forward") {
                Broadcast::Same => (false, false),
                Broadcast::Right => (false, true),
                Broadcast::Left => (true, false),
            };
            if needs[0] {
                grads[0] = Some(if a_bcast { reduced(a) } else { full(a) });
            }
            if needs[1] {
                grads[1] = Some(if b_bcast { reduced(b) } else { full(b) });
            }
        }
        Primitive::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            // grad wrt `this` given the other operand `other`
            let grad_for = |this: &Tensor<T>, other: &Tensor<T>| -> Tensor<T> {
                let od = other.data();
                if this.numel() == gd.len() {
                    let v: Vec<T> = if od.len() == gd.len() {
                        gd.iter().zip(od).map(|(&x, &y)| x * y).collect()
                    } else {
                        gd.chunks_exact(od.len()).flat_map(|ch| ch.iter().zip(od).map(|(&x, &y)| x * y)).collect()
                    };
                    Tensor::from_parts(this.shape().to_vec(), v)
                } else {
                    let small = this.numel();
                    let mut acc = vec![T::zero(); small];
                    for (gch, och) in gd.chunks_exact(small).zip(od.chunks_exact(small)) {
                        for ((a, &x), &y) in acc.iter_mut().zip(gch).zip(och) {
                            *a = *a + x * y;
                        }
                    }
                    Tensor::from_parts(this.shape().to_vec(), acc)
                }
            };
            if needs[0] {
                grads[0] = Some(grad_for(a, b));
            }
            if needs[1] {
                grads[1] = Some(grad_for(b, a));
            }
        }
        Primitive::Conv1d { stride } => {
            let (x, w) = (inputs[0], inputs[1]);
            let geo = ConvGeometry::new(x.shape(), w.shape(), *stride).expect("checked in forward");
            let g_rows = geo.to_rows(gd);
            let rows = geo.batch * geo.l_out;
            if needs[1] {
                let cols = geo.im2col(x.data());
                let mut dw = vec![T::zero(); w.numel()];
                gemm(&g_rows, (rows, geo.c_out), true, &cols, (rows, geo.patch()), false, &mut dw, false);
                grads[1] = Some(Tensor::from_parts(w.shape().to_vec(), dw));
            }
            if needs[0] {
                let mut dcols = vec![T::zero(); rows * geo.patch()];
                gemm(&g_rows, (rows, geo.c_out), false, w.data(), (geo.c_out, geo.patch()), false, &mut dcols, false);
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), geo.col2im(&dcols)));
            }
        }
        Primitive::LayerNorm { .. } => {
            let Saved::LayerNorm { xhat, rstd } = saved else { unreachable!("layer_norm saves statistics") };
            let (x, gamma) = (inputs[0], inputs[1]);
            let d = gamma.numel();
            let rows = x.numel() / d;
            if needs[1] || needs[2] {
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                for r in 0..rows {
                    for j in 0..d {
                        dgamma[j] = dgamma[j] + gd[r * d + j] * xhat[r * d + j];
                        dbeta[j] = dbeta[j] + gd[r * d + j];
                    }
                }
                if needs[1] {
                    grads[1] = Some(Tensor::from_parts(vec![d], dgamma));
                }
                if needs[2] {
                    grads[2] = Some(Tensor::from_parts(vec![d], dbeta));
                }
            }
            if needs[0] {
                let mut dx = vec![T::zero(); x.numel()];
                let df = c::<T>(d as f64);
                for r in 0..rows {
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gd[r * d + j] * gamma.data()[j];
                        sum_dh = sum_dh + dh;
                        sum_dh_h = sum_dh_h + dh * xhat[r * d + j];
                    }
                    let scale = rstd[r] / df;
                    for j in 0..d {
                        let dh = gd[r * d + j] * gamma.data()[j];
                        dx[r * d + j] = scale * (df * dh - sum_dh - xhat[r * d + j] * sum_dh_h);
                    }
                }
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
        }
        Primitive::Softmax { log } => {
            if needs[0] {
                let d = *out.shape().last().expect("non-empty");
                let mut dx = vec![T::zero(); out.numel()];
                for ((y, gr), o) in out.data().chunks_exact(d).zip(gd.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
                    if *log {
                        let total = gr.iter().fold(T::zero(), |s, &v| s + v);
                        for ((oj, &yj), &gj) in o.iter_mut().zip(y).zip(gr) {
                            *oj = gj - yj.exp() * total;
                        }
                    } else {
                        let dot = y.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        for ((oj, &yj), &gj) in o.iter_mut().zip(y).zip(gr) {
                            *oj = yj * (gj - dot);
                        }
                    }
                }
                grads[0] = Some(Tensor::from_parts(out.shape().to_vec(), dx));
            }
        }
        Primitive::Gelu => {
            if needs[0] {
                let x = inputs[0];
                let dx = x.data().iter().zip(gd).map(|(&v, &gv)| gv * gelu_parts(v).1).collect();
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
        }
        Primitive::Sigmoid { log } => {
            if needs[0] {
                let x = inputs[0];
                let dx = if *log {
                    x.data().iter().zip(gd).map(|(&v, &gv)| gv * c(sigmoid(-v.as_f64()))).collect()
                } else {
                    out.data().iter().zip(gd).map(|(&y, &gv)| gv * y * (T::one() - y)).collect()
                };
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
        }
        Primitive::MeanPool { axis } => {
            if needs[0] {
                let x = inputs[0];
                let dx = match axis {
                    None => vec![gd[0] / c(x.numel() as f64); x.numel()],
                    Some(axis) => {
                        let (outer, len, inner) = split_axis(x.shape(), *axis);
                        let inv = c::<T>(1.0 / len as f64);
                        let mut dx = Vec::with_capacity(x.numel());
                        for o in 0..outer {
                            let src = &gd[o * inner..(o + 1) * inner];
                            for _ in 0..len {
                                dx.extend(src.iter().map(|&v| v * inv));
                            }
                        }
                        dx
                    }
                };
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
        }
        Primitive::Concat { axis } => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for (i, t) in inputs.iter().enumerate() {
                let len = t.shape()[*axis];
                if needs[i] {
                    let mut dx = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        dx.extend_from_slice(&gd[start..start + len * inner]);
                    }
                    grads[i] = Some(Tensor::from_parts(t.shape().to_vec(), dx));
                }
                offset += len;
            }
        }
        Primitive::IndexSelect { axis, indices } => {
            if needs[0] {
                let x = inputs[0];
                let (outer, len, inner) = split_axis(x.shape(), *axis);
                let mut dx = vec![T::zero(); x.numel()];
                for o in 0..outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let src = &gd[(o * indices.len() + j) * inner..(o * indices.len() + j + 1) * inner];
                        let dst = &mut dx[(o * len + i) * inner..(o * len + i + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), dx));
            }
        }
        Primitive::Scatter { indices } => {
            let (base, src) = (inputs[0], inputs[1]);
            let row: usize = base.shape()[1..].iter().product();
            if needs[0] {
                let mut db = gd.to_vec();
                for &i in indices {
                    db[i * row..(i + 1) * row].fill(T::zero());
                }
                grads[0] = Some(Tensor::from_parts(base.shape().to_vec(), db));
            }
            if needs[1] {
                let mut ds = Vec::with_capacity(src.numel());
                for &i in indices {
                    ds.extend_from_slice(&gd[i * row..(i + 1) * row]);
                }
                grads[1] = Some(Tensor::from_parts(src.shape().to_vec(), ds));
            }
        }
        Primitive::Rfft => {
            if needs[0] {
                let x = inputs[0];
                let n = *x.shape().last().expect("non-empty");
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), kernels::rfft_adjoint(gd, n)));
            }
        }
        Primitive::Irfft { n } => {
            if needs[0] {
                let x = inputs[0];
                grads[0] = Some(Tensor::from_parts(x.shape().to_vec(), kernels::irfft_adjoint(gd, *n)));
            }
        }
        Primitive::CosineSimilarity => {
            let Saved::Cosine { inv_na, inv_nb } = saved else { unreachable!("cosine saves norms") };
            let (a, b) = (inputs[0], inputs[1]);
            let d = a.shape()[1];
            let (m, n) = (a.shape()[0], b.shape()[0]);
            let s = out.data();
            let unit = |t: &Tensor<T>, inv: &[T]| -> Vec<T> {
                t.data().chunks_exact(d).zip(inv).flat_map(|(r, &k)| r.iter().map(move |&v| v * k)).collect()
            };
            let ua = unit(a, inv_na);
            let ub = unit(b, inv_nb);
            if needs[0] {
                // da_i = (Σ_j g_ij b̂_j − (Σ_j g_ij s_ij) â_i) / |a_i|
                let mut da = vec![T::zero(); m * d];
                gemm(gd, (m, n), false, &ub, (n, d), false, &mut da, false);
                for i in 0..m {
                    let gs = (0..n).fold(T::zero(), |acc, j| acc + gd[i * n + j] * s[i * n + j]);
                    for k in 0..d {
                        da[i * d + k] = (da[i * d + k] - gs * ua[i * d + k]) * inv_na[i];
                    }
                }
                grads[0] = Some(Tensor::from_parts(a.shape().to_vec(), da));
            }
            if needs[1] {
                let mut db = vec![T::zero(); n * d];
                gemm(gd, (m, n), true, &ua, (m, d), false, &mut db, false);
                for j in 0..n {
                    let gs = (0..m).fold(T::zero(), |acc, i| acc + gd[i * n + j] * s[i * n + j]);
                    for k in 0..d {
                        db[j * d + k] = (db[j * d + k] - gs * ub[j * d + k]) * inv_nb[j];
                    }
                }
                grads[1] = Some(Tensor::from_parts(b.shape().to_vec(), db));
            }
        }
        Primitive::Scale { factor } => {
            if needs[0] {
                let f = c::<T>(*factor);
                grads[0] = Some(g.map(|v| v * f).reshape(inputs[0].shape()).expect("same numel"));
            }
        }
        Primitive::Reshape { .. } => {
            if needs[0] {
                grads[0] = Some(g.reshape(inputs[0].shape()).expect("same numel"));
            }
        }
    }
    grads
}
