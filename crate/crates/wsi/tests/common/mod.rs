//! Shared helpers for the integration suites, most importantly a naive
//! reference forward pass written against the architecture description
//! rather than the production kernels.
//!
//! Independence rules for the reference path: no `wsi::kernels`, no
//! `wsi::quant`, f64 arithmetic throughout, direct-index loops instead of
//! im2col or blocking, and its own erf. It reads weights and config through
//! the public `Model` accessors (the weights are the object under test, the
//! arithmetic is not).

use wsi::model::{ClipInput, Model};

/// Abramowitz & Stegun 7.1.26 rational erf approximation, max absolute
/// error about 1.5e-7: deliberately a different algorithm from the
/// production GELU's erf.
pub fn erf_approx(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn gelu(x: f64) -> f64 {
    x * 0.5 * (1.0 + erf_approx(x / std::f64::consts::SQRT_2))
}

fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-major [rows][cols] matrix of f64.
#[derive(Clone)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

fn weight_f64(m: &Model, name: &str) -> (Vec<usize>, Vec<f64>) {
    let t = m.f32_tensor(name).unwrap_or_else(|e| {
        panic!("reference forward needs f32 tensor {name}: {e}");
    });
    (
        t.shape().to_vec(),
        t.data().iter().map(|v| f64::from(*v)).collect(),
    )
}

/// x[T,IN] * w[OUT,IN]^T + b, direct loops.
fn linear(x: &Mat, w_shape: &[usize], w: &[f64], b: &[f64]) -> Mat {
    let (out_f, k) = (w_shape[0], w_shape[1]);
    assert_eq!(k, x.cols, "reference linear shape");
    let mut y = Mat::zeros(x.rows, out_f);
    for t in 0..x.rows {
        for o in 0..out_f {
            let mut acc = 0.0;
            for i in 0..k {
                acc += x.data[t * k + i] * w[o * k + i];
            }
            y.data[t * out_f + o] = acc + b[o];
        }
    }
    y
}

fn layer_norm(x: &Mat, g: &[f64], b: &[f64], eps: f64) -> Mat {
    let h = x.cols;
    let mut y = Mat::zeros(x.rows, h);
    for t in 0..x.rows {
        let row = x.row(t);
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for i in 0..h {
            y.data[t * h + i] = (row[i] - mean) * inv * g[i] + b[i];
        }
    }
    y
}

/// Grouped 1-D cross-correlation, channels-first: x[C_in][T] -> y[C_out][T_out].
#[allow(clippy::too_many_arguments)]
fn conv1d(
    x: &[Vec<f64>],
    w_shape: &[usize],
    w: &[f64],
    bias: Option<&[f64]>,
    stride: usize,
    groups: usize,
    pad: (usize, usize),
) -> Vec<Vec<f64>> {
    let (c_out, c_in_g, k) = (w_shape[0], w_shape[1], w_shape[2]);
    let t = x[0].len();
    let t_out = (t + pad.0 + pad.1 - k) / stride + 1;
    let out_per_group = c_out / groups;
    let mut y = vec![vec![0.0f64; t_out]; c_out];
    for oc in 0..c_out {
        let g = oc / out_per_group;
        for to in 0..t_out {
            let mut acc = 0.0;
            for ci in 0..c_in_g {
                let src = &x[g * c_in_g + ci];
                for kk in 0..k {
                    let pos = to * stride + kk;
                    if pos >= pad.0 && pos < pad.0 + t {
                        acc += w[(oc * c_in_g + ci) * k + kk] * src[pos - pad.0];
                    }
                }
            }
            y[oc][to] = acc + bias.map_or(0.0, |b| b[oc]);
        }
    }
    y
}

/// The whole float forward pass in f64: probabilities and pooled embedding.
pub fn naive_infer(m: &Model, clip: &ClipInput) -> (Vec<f64>, Vec<f64>) {
    let cfg = m.config();
    let mono: Vec<f64> = clip
        .left()
        .iter()
        .zip(clip.right())
        .map(|(l, r)| f64::from(*l) + f64::from(*r))
        .collect();

    // Frontend: strided convs, GELU after each, no bias, no padding.
    let mut x = vec![mono];
    for (i, stride) in cfg.conv_strides.iter().enumerate() {
        let (shape, w) = weight_f64(m, &format!("frontend.conv{i}.w"));
        let mut y = conv1d(&x, &shape, &w, None, *stride, 1, (0, 0));
        for ch in &mut y {
            for v in ch {
                *v = gelu(*v);
            }
        }
        x = y;
    }
    let frames_t = x[0].len();
    let mut frames = Mat::zeros(frames_t, cfg.conv_channels);
    for (c, ch) in x.iter().enumerate() {
        for (t, v) in ch.iter().enumerate() {
            frames.data[t * cfg.conv_channels + c] = *v;
        }
    }

    // Projection to model width, then layer norm.
    let (pw_shape, pw) = weight_f64(m, "proj.w");
    let (_, pb) = weight_f64(m, "proj.b");
    let mut h = linear(&frames, &pw_shape, &pw, &pb);
    let (_, g) = weight_f64(m, "proj.ln.g");
    let (_, b) = weight_f64(m, "proj.ln.b");
    h = layer_norm(&h, &g, &b, 1e-5);

    if cfg.has_positional_conv {
        let k = cfg.pos_conv_kernel;
        let cols: Vec<Vec<f64>> = (0..cfg.hidden)
            .map(|c| (0..h.rows).map(|t| h.data[t * cfg.hidden + c]).collect())
            .collect();
        let (shape, w) = weight_f64(m, "posconv.w");
        let (_, bias) = weight_f64(m, "posconv.b");
        let p = conv1d(
            &cols,
            &shape,
            &w,
            Some(&bias),
            1,
            cfg.pos_conv_groups,
            ((k - 1) / 2, k / 2),
        );
        for (c, ch) in p.iter().enumerate() {
            for (t, v) in ch.iter().enumerate() {
                h.data[t * cfg.hidden + c] += *v;
            }
        }
    }

    let mut outputs = vec![h.clone()];
    let heads = cfg.heads;
    let d = cfg.hidden / heads;
    let scale = 1.0 / (d as f64).sqrt();
    for layer in 0..cfg.num_layers {
        let s = m.layer_set(layer);
        let name = |part: &str| format!("enc.{s}.{part}");
        let get = |part: &str| weight_f64(m, &name(part));

        let (wq_s, wq) = get("attn.wq");
        let (_, bq) = get("attn.bq");
        let (wk_s, wk) = get("attn.wk");
        let (_, bk) = get("attn.bk");
        let (wv_s, wv) = get("attn.wv");
        let (_, bv) = get("attn.bv");
        let q = linear(&h, &wq_s, &wq, &bq);
        let k = linear(&h, &wk_s, &wk, &bk);
        let v = linear(&h, &wv_s, &wv, &bv);

        let t_len = h.rows;
        let width = cfg.hidden;
        let mut ctx = Mat::zeros(t_len, width);
        for head in 0..heads {
            let lo = head * d;
            for i in 0..t_len {
                let mut scores = vec![0.0f64; t_len];
                for (j, sc) in scores.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += q.data[i * width + lo + c] * k.data[j * width + lo + c];
                    }
                    *sc = acc * scale;
                }
                softmax(&mut scores);
                for (j, a) in scores.iter().enumerate() {
                    for c in 0..d {
                        ctx.data[i * width + lo + c] += a * v.data[j * width + lo + c];
                    }
                }
            }
        }

        let (wo_s, wo) = get("attn.wo");
        let (_, bo) = get("attn.bo");
        let mut attn = linear(&ctx, &wo_s, &wo, &bo);
        for (a, xv) in attn.data.iter_mut().zip(&h.data) {
            *a += xv;
        }
        let (_, g1) = get("ln1.g");
        let (_, b1) = get("ln1.b");
        let mid = layer_norm(&attn, &g1, &b1, 1e-5);

        let (w1_s, w1) = get("ffn.w1");
        let (_, fb1) = get("ffn.b1");
        let mut h1 = linear(&mid, &w1_s, &w1, &fb1);
        for v in &mut h1.data {
            *v = gelu(*v);
        }
        let (w2_s, w2) = get("ffn.w2");
        let (_, fb2) = get("ffn.b2");
        let mut h2 = linear(&h1, &w2_s, &w2, &fb2);
        for (a, xv) in h2.data.iter_mut().zip(&mid.data) {
            *a += xv;
        }
        let (_, g2) = get("ln2.g");
        let (_, b2) = get("ln2.b");
        h = layer_norm(&h2, &g2, &b2, 1e-5);
        outputs.push(h.clone());
    }

    // Softmax-weighted layer mix.
    let (_, logits) = weight_f64(m, "head.layer_logits");
    let mut lw = logits.clone();
    softmax(&mut lw);
    let (t_len, width) = (outputs[0].rows, outputs[0].cols);
    let mut mixed = Mat::zeros(t_len, width);
    for (w, out) in lw.iter().zip(&outputs) {
        for (acc, v) in mixed.data.iter_mut().zip(&out.data) {
            *acc += w * v;
        }
    }

    // Additive attention pooling: att = softmax over t of v . tanh(W h_t + b).
    let (pw_s, pw) = weight_f64(m, "head.pool.w");
    let (_, pb) = weight_f64(m, "head.pool.b");
    let mut u = linear(&mixed, &pw_s, &pw, &pb);
    for v in &mut u.data {
        *v = v.tanh();
    }
    let (_, vvec) = weight_f64(m, "head.pool.v");
    let mut att: Vec<f64> = (0..t_len)
        .map(|t| u.row(t).iter().zip(&vvec).map(|(a, b)| a * b).sum())
        .collect();
    softmax(&mut att);
    let mut pooled = vec![0.0f64; width];
    for (t, a) in att.iter().enumerate() {
        for (p, v) in pooled.iter_mut().zip(mixed.row(t)) {
            *p += a * v;
        }
    }

    let pooled_m = Mat {
        rows: 1,
        cols: width,
        data: pooled.clone(),
    };
    let (w1_s, w1) = weight_f64(m, "head.cls.w1");
    let (_, b1) = weight_f64(m, "head.cls.b1");
    let mut z1 = linear(&pooled_m, &w1_s, &w1, &b1);
    for v in &mut z1.data {
        *v = gelu(*v);
    }
    let (w2_s, w2) = weight_f64(m, "head.cls.w2");
    let (_, b2) = weight_f64(m, "head.cls.b2");
    let z2 = linear(&z1, &w2_s, &w2, &b2);
    let mut probs = z2.data;
    softmax(&mut probs);
    (probs, pooled)
}

/// Max TPR over every candidate threshold (all distinct scores plus the
/// all-reject point) whose FPR stays within the budget. Quadratic on
/// purpose: recounts from scratch at each threshold.
pub fn brute_force_tpr_at_fpr(scored: &[(f32, bool)], budget: f64) -> f64 {
    let pos = scored.iter().filter(|(_, p)| *p).count();
    let neg = scored.len() - pos;
    assert!(pos > 0 && neg > 0, "oracle needs both classes");
    let mut best = 0.0f64; // all-reject: fpr 0, tpr 0
    let mut thresholds: Vec<f32> = scored.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(f32::total_cmp);
    thresholds.dedup();
    for th in thresholds {
        let tp = scored.iter().filter(|(s, p)| *p && *s >= th).count();
        let fp = scored.iter().filter(|(s, p)| !*p && *s >= th).count();
        let fpr = fp as f64 / neg as f64;
        if fpr <= budget {
            best = best.max(tp as f64 / pos as f64);
        }
    }
    best
}

/// Single-scale (whole-tensor) symmetric int8 round trip; returns the
/// maximum absolute reconstruction error. The comparison point for the
/// per-channel scheme.
pub fn per_tensor_max_abs_err(w: &[f32]) -> f32 {
    let max = w.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = if max == 0.0 { 1.0 } else { max / 127.0 };
    w.iter()
        .map(|v| {
            let q = (v / scale).round().clamp(-127.0, 127.0);
            (v - q * scale).abs()
        })
        .fold(0.0f32, f32::max)
}
