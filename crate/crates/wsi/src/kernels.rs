//! Numeric kernels: matmul, conv1d, layer norm, GELU, softmax, attention.
//!
//! Pure functions over [`Tensor`]: no hidden state, no implicit broadcasting,
//! shape mismatches are errors. Finite-in/finite-out is a contract at every
//! boundary, asserted in debug builds.
//!
//! # Conventions
//!
//! * matmul is plain `a[M,K] * b[K,N]`; convolution is cross-correlation (no
//!   kernel flip), the deep-learning convention.
//! * GELU is the exact erf form `x * 0.5 * (1 + erf(x / sqrt(2)))`, not the
//!   tanh approximation, so independent reimplementations agree to float
//!   precision.
//! * softmax subtracts the row max before exponentiation.
//!
//! Reductions accumulate into sixteen independent lanes so the optimizer can
//! vectorize them without reassociating a single serial chain; the lane
//! layout is fixed, so results are deterministic for a given build.

use crate::tensor::Tensor;
use crate::{Error, Result};

#[cfg(debug_assertions)]
fn debug_check_finite(t: &Tensor, what: &str) {
    debug_assert!(t.is_finite(), "{what}: non-finite values");
}

#[cfg(not(debug_assertions))]
fn debug_check_finite(_t: &Tensor, _what: &str) {}

/// Dot product with sixteen-lane accumulation.
#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let n16 = a.len() - a.len() % 16;
    let mut acc = [0.0f32; 16];
    for (ca, cb) in a[..n16].chunks_exact(16).zip(b[..n16].chunks_exact(16)) {
        for i in 0..16 {
            acc[i] = ca[i].mul_add(cb[i], acc[i]);
        }
    }
    let mut half = [0.0f32; 8];
    for i in 0..8 {
        half[i] = acc[i] + acc[i + 8];
    }
    let mut s =
        ((half[0] + half[4]) + (half[1] + half[5])) + ((half[2] + half[6]) + (half[3] + half[7]));
    for (x, y) in a[n16..].iter().zip(&b[n16..]) {
        s = x.mul_add(*y, s);
    }
    s
}

/// `a[M,K] * b[K,N] -> [M,N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank(2, "matmul lhs")?;
    b.expect_rank(2, "matmul rhs")?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "matmul: lhs is {m}x{k}, rhs is {k2}x{n}"
        )));
    }
    debug_check_finite(a, "matmul lhs");
    debug_check_finite(b, "matmul rhs");

    // Walk b row-wise (ikj) so the inner loop streams contiguous memory.
    let mut out = vec![0.0f32; m * n];
    let bd = b.data();
    for (i, arow) in a.data().chunks_exact(k).enumerate() {
        let orow = &mut out[i * n..(i + 1) * n];
        for (aik, brow) in arow.iter().zip(bd.chunks_exact(n)) {
            if *aik == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o = aik.mul_add(*bv, *o);
            }
        }
    }
    let t = Tensor::new(vec![m, n], out)?;
    debug_check_finite(&t, "matmul out");
    Ok(t)
}

/// `x[T,IN] * w[OUT,IN]^T + b -> [T,OUT]`.
///
/// The natural layout for layer weights (one contiguous row per output
/// feature); matmul against a stored transpose, as a dot per output.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    x.expect_rank(2, "linear input")?;
    w.expect_rank(2, "linear weight")?;
    let (t, k) = (x.rows(), x.cols());
    let (out_f, k2) = (w.rows(), w.cols());
    if k != k2 {
        return Err(Error::ShapeMismatch(format!(
            "linear: input is {t}x{k}, weight is {out_f}x{k2}"
        )));
    }
    if let Some(b) = b {
        if b.numel() != out_f {
            return Err(Error::ShapeMismatch(format!(
                "linear: bias has {} features, weight has {out_f}",
                b.numel()
            )));
        }
    }
    debug_check_finite(x, "linear input");
    let mut out = vec![0.0f32; t * out_f];
    for (xrow, orow) in x.data().chunks_exact(k).zip(out.chunks_exact_mut(out_f)) {
        for (o, wrow) in orow.iter_mut().zip(w.data().chunks_exact(k)) {
            *o = dot(xrow, wrow);
        }
        if let Some(b) = b {
            for (o, bv) in orow.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    let y = Tensor::new(vec![t, out_f], out)?;
    debug_check_finite(&y, "linear out");
    Ok(y)
}

/// Output length of a 1-D convolution: `(t + pad_l + pad_r - k) / stride + 1`.
pub fn conv1d_out_len(t: usize, k: usize, stride: usize, pad: (usize, usize)) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("conv1d: stride must be >= 1".into()));
    }
    let padded = t + pad.0 + pad.1;
    if padded < k || k == 0 {
        return Err(Error::ShapeMismatch(format!(
            "conv1d: kernel {k} longer than padded input {padded}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Grouped 1-D convolution (cross-correlation).
///
/// * `x`: `[C_in, T]`
/// * `w`: `[C_out, C_in/groups, K]`
/// * `bias`: `[C_out]` or absent
///
/// Internally lowered to im2col + dot so the reduction length is
/// `(C_in/groups) * K` regardless of kernel size.
pub fn conv1d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    groups: usize,
    pad: (usize, usize),
) -> Result<Tensor> {
    x.expect_rank(2, "conv1d input")?;
    w.expect_rank(3, "conv1d weight")?;
    let (c_in, t) = (x.shape()[0], x.shape()[1]);
    let (c_out, c_in_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::ShapeMismatch(format!(
            "conv1d: groups {groups} must divide C_in {c_in} and C_out {c_out}"
        )));
    }
    if c_in / groups != c_in_g {
        return Err(Error::ShapeMismatch(format!(
            "conv1d: weight expects {c_in_g} input channels per group, input has {}",
            c_in / groups
        )));
    }
    if let Some(b) = bias {
        if b.numel() != c_out {
            return Err(Error::ShapeMismatch(format!(
                "conv1d: bias has {} channels, weight has {c_out}",
                b.numel()
            )));
        }
    }
    let t_out = conv1d_out_len(t, k, stride, pad)?;
    debug_check_finite(x, "conv1d input");

    let xd = x.data();
    let wd = w.data();
    let wrow = c_in_g * k;
    let out_per_group = c_out / groups;
    let mut out = vec![0.0f32; c_out * t_out];

    // One im2col buffer per group: [t_out, c_in_g * k].
    let mut col = vec![0.0f32; t_out * wrow];
    for g in 0..groups {
        for to in 0..t_out {
            let start = to * stride; // position in padded coordinates
            let dst = &mut col[to * wrow..(to + 1) * wrow];
            for ci in 0..c_in_g {
                let src = &xd[(g * c_in_g + ci) * t..(g * c_in_g + ci + 1) * t];
                for kk in 0..k {
                    let pos = start + kk;
                    dst[ci * k + kk] = if pos < pad.0 || pos >= pad.0 + t {
                        0.0
                    } else {
                        src[pos - pad.0]
                    };
                }
            }
        }
        for oc in 0..out_per_group {
            let oc_abs = g * out_per_group + oc;
            let wr = &wd[oc_abs * wrow..(oc_abs + 1) * wrow];
            let b = bias.map_or(0.0, |b| b.data()[oc_abs]);
            let orow = &mut out[oc_abs * t_out..(oc_abs + 1) * t_out];
            for (to, o) in orow.iter_mut().enumerate() {
                *o = dot(&col[to * wrow..(to + 1) * wrow], wr) + b;
            }
        }
    }
    let y = Tensor::new(vec![c_out, t_out], out)?;
    debug_check_finite(&y, "conv1d out");
    Ok(y)
}

/// Row-wise layer norm over the last dimension, with affine params.
///
/// Mean and variance (population) accumulate in f64; the normalized value is
/// `(x - mean) / sqrt(var + eps) * gamma + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    x.expect_rank(2, "layer_norm input")?;
    let h = x.cols();
    if gamma.numel() != h || beta.numel() != h {
        return Err(Error::ShapeMismatch(format!(
            "layer_norm: gamma/beta must have {h} features, got {}/{}",
            gamma.numel(),
            beta.numel()
        )));
    }
    debug_check_finite(x, "layer_norm input");
    let mut out = vec![0.0f32; x.numel()];
    let (g, b) = (gamma.data(), beta.data());
    for (row, orow) in x.data().chunks_exact(h).zip(out.chunks_exact_mut(h)) {
        let mut mean = 0.0f64;
        for v in row {
            mean += f64::from(*v);
        }
        mean /= h as f64;
        let mut var = 0.0f64;
        for v in row {
            let d = f64::from(*v) - mean;
            var += d * d;
        }
        var /= h as f64;
        let inv = 1.0 / (var + f64::from(eps)).sqrt();
        for i in 0..h {
            let n = ((f64::from(row[i]) - mean) * inv) as f32;
            orow[i] = n.mul_add(g[i], b[i]);
        }
    }
    let y = Tensor::new(x.shape().to_vec(), out)?;
    debug_check_finite(&y, "layer_norm out");
    Ok(y)
}

/// Exact-erf GELU, elementwise: `x * Phi(x)`.
#[inline]
#[must_use]
pub fn gelu_scalar(x: f32) -> f32 {
    let xd = f64::from(x);
    (xd * 0.5 * (1.0 + libm::erf(xd * std::f64::consts::FRAC_1_SQRT_2))) as f32
}

pub fn gelu(x: &Tensor) -> Tensor {
    debug_check_finite(x, "gelu input");
    let mut y = x.clone();
    gelu_inplace(y.data_mut());
    y
}

pub fn gelu_inplace(xs: &mut [f32]) {
    for v in xs {
        *v = gelu_scalar(*v);
    }
}

/// Row-wise softmax over the last dimension, max-subtracted.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "softmax input")?;
    debug_check_finite(x, "softmax input");
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(x.cols()) {
        softmax_inplace(row);
    }
    debug_check_finite(&y, "softmax out");
    Ok(y)
}

pub fn softmax_inplace(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row {
        *v *= inv;
    }
}

/// Scaled dot-product attention given explicit Q/K/V, `heads` head slices of
/// width `H / heads` along the feature axis. Scale is `1/sqrt(H/heads)`.
///
/// Shared by the float and the int8 paths, which only differ in how the
/// Q/K/V/output projections are computed.
pub fn attention_core(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    q.expect_rank(2, "attention q")?;
    let (t, h) = (q.rows(), q.cols());
    if k.shape() != [t, h] || v.shape() != [t, h] {
        return Err(Error::ShapeMismatch(format!(
            "attention: q {:?}, k {:?}, v {:?} must agree",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if heads == 0 || h % heads != 0 {
        return Err(Error::ShapeMismatch(format!(
            "attention: heads {heads} must divide width {h}"
        )));
    }
    let d = h / heads;
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = vec![0.0f32; t * h];
    let mut scores = vec![0.0f32; t];
    for hd in 0..heads {
        let lo = hd * d;
        for i in 0..t {
            let qi = &q.row(i)[lo..lo + d];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qi, &k.row(j)[lo..lo + d]) * scale;
            }
            softmax_inplace(&mut scores);
            let orow = &mut out[i * h + lo..i * h + lo + d];
            for (j, a) in scores.iter().enumerate() {
                let vr = &v.row(j)[lo..lo + d];
                for (o, vv) in orow.iter_mut().zip(vr) {
                    *o = a.mul_add(*vv, *o);
                }
            }
        }
    }
    let y = Tensor::new(vec![t, h], out)?;
    debug_check_finite(&y, "attention out");
    Ok(y)
}

/// Multi-head self-attention block: Q/K/V/output projections around
/// [`attention_core`]. Weights are `[H, H]` row-per-output, biases `[H]`.
#[allow(clippy::too_many_arguments)]
pub fn mhsa(
    x: &Tensor,
    wq: &Tensor,
    bq: &Tensor,
    wk: &Tensor,
    bk: &Tensor,
    wv: &Tensor,
    bv: &Tensor,
    wo: &Tensor,
    bo: &Tensor,
    heads: usize,
) -> Result<Tensor> {
    let q = linear(x, wq, Some(bq))?;
    let k = linear(x, wk, Some(bk))?;
    let v = linear(x, wv, Some(bv))?;
    let ctx = attention_core(&q, &k, &v, heads)?;
    linear(&ctx, wo, Some(bo))
}
