//! Symmetric per-output-channel int8 post-training quantization.
//!
//! # Scheme
//!
//! For each output channel `c` of a weight tensor (leading dimension):
//!
//! * scale `s_c = max|w[c, ..]| / 127`, or `1.0` for an all-zero channel
//! * `q = clamp(round_half_away_from_zero(w / s_c), -127, 127)`
//!
//! `-128` is never produced, so negation stays in range and the dequantized
//! grid is symmetric. Dequantization is `q * s_c`. Biases, norm parameters,
//! the layer-sum logits, and the pooling vector are never quantized; which
//! weight matrices are is the [`QuantPolicy`]'s decision.
//!
//! At run time activations are quantized dynamically per row with the same
//! rule, the matmul accumulates in i32, and the result is rescaled by
//! `s_x * s_c`, so an all-zero activation row yields exact zeros.

use crate::model::{quantizable, Model, Stored};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Which weight groups the quantizer covers. The deployment default
/// quantizes everything that is not a convolution: the transformer stack and
/// the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantPolicy {
    pub quantize_transformer: bool,
    pub quantize_classifier: bool,
    pub quantize_frontend: bool,
    pub quantize_pos_conv: bool,
}

impl Default for QuantPolicy {
    fn default() -> Self {
        Self {
            quantize_transformer: true,
            quantize_classifier: true,
            quantize_frontend: false,
            quantize_pos_conv: false,
        }
    }
}

impl QuantPolicy {
    #[must_use]
    pub fn none() -> Self {
        Self {
            quantize_transformer: false,
            quantize_classifier: false,
            quantize_frontend: false,
            quantize_pos_conv: false,
        }
    }

    /// Does this policy cover the named tensor? Only weight matrices are
    /// ever covered, per [`quantizable`].
    #[must_use]
    pub fn covers(&self, name: &str) -> bool {
        if !quantizable(name) {
            return false;
        }
        if name.starts_with("frontend.") {
            self.quantize_frontend
        } else if name == "posconv.w" {
            self.quantize_pos_conv
        } else if name.starts_with("enc.") {
            self.quantize_transformer
        } else {
            self.quantize_classifier
        }
    }
}

/// Int8 tensor: original shape, one f32 scale per leading-dim channel.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    scales: Vec<f32>,
    data: Vec<i8>,
}

impl QuantizedTensor {
    pub fn new(shape: Vec<usize>, scales: Vec<f32>, data: Vec<i8>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "quantized tensor: shape {shape:?} wants {numel} values, got {}",
                data.len()
            )));
        }
        if shape.is_empty() || scales.len() != shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "quantized tensor: {} scales for shape {shape:?}",
                scales.len()
            )));
        }
        Ok(Self {
            shape,
            scales,
            data,
        })
    }

    #[must_use]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[must_use]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[must_use]
    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    #[must_use]
    pub fn values(&self) -> &[i8] {
        &self.data
    }

    /// Elements per channel (product of trailing dims).
    #[must_use]
    pub fn channel_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    #[must_use]
    pub fn channel(&self, c: usize) -> &[i8] {
        let n = self.channel_len();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Round half away from zero; ties like 63.5 go to 64, -63.5 to -64.
#[inline]
fn round_half_away(x: f32) -> i32 {
    x.round() as i32
}

/// Quantize a weight tensor per leading-dim channel.
pub fn quantize_tensor(w: &Tensor) -> Result<QuantizedTensor> {
    if w.shape().is_empty() || w.shape().len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "quantize: weight matrices have rank >= 2, got {:?}",
            w.shape()
        )));
    }
    let channels = w.shape()[0];
    let n = w.numel() / channels;
    let mut scales = Vec::with_capacity(channels);
    let mut data = Vec::with_capacity(w.numel());
    for c in 0..channels {
        let row = &w.data()[c * n..(c + 1) * n];
        let max = row.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let scale = if max == 0.0 { 1.0 } else { max / 127.0 };
        scales.push(scale);
        for v in row {
            let q = round_half_away(v / scale).clamp(-127, 127);
            data.push(q as i8);
        }
    }
    QuantizedTensor::new(w.shape().to_vec(), scales, data)
}

/// Reconstruct f32 values: `q * s_c`.
#[must_use]
pub fn dequantize_tensor(q: &QuantizedTensor) -> Tensor {
    let n = q.channel_len();
    let mut data = Vec::with_capacity(q.numel());
    for (c, s) in q.scales.iter().enumerate() {
        for v in q.channel(c) {
            data.push(f32::from(*v) * s);
        }
    }
    debug_assert_eq!(data.len(), n * q.shape[0]);
    Tensor::new(q.shape.clone(), data).expect("shape preserved")
}

/// i32 dot of two i8 slices. Each product is at most 127^2 and the contracted
/// dimension is a few thousand at most, so the i32 sum cannot overflow; the
/// explicit wrapping add keeps builds with overflow checks from turning the
/// reduction into a serial chain of checked adds, which would block
/// vectorization.
#[inline]
fn dot_i8(a: &[i8], b: &[i8]) -> i32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0i32, |s, (x, y)| {
        s.wrapping_add(i32::from(*x) * i32::from(*y))
    })
}

/// Int8 matmul against a quantized weight: `x[T,K] * qw[N,K]^T -> [T,N]`.
///
/// Each activation row is quantized on the fly (`s_x = max|row|/127`), the
/// products accumulate in i32, and each output is rescaled by `s_x * s_c`.
pub fn qmatmul(x: &Tensor, qw: &QuantizedTensor, bias: Option<&Tensor>) -> Result<Tensor> {
    x.expect_rank(2, "qmatmul input")?;
    if qw.shape().len() != 2 || qw.shape()[1] != x.cols() {
        return Err(Error::ShapeMismatch(format!(
            "qmatmul: input {:?} against weight {:?}",
            x.shape(),
            qw.shape()
        )));
    }
    let (t, k) = (x.rows(), x.cols());
    let n = qw.shape()[0];
    if let Some(b) = bias {
        if b.numel() != n {
            return Err(Error::ShapeMismatch(format!(
                "qmatmul: bias has {} features, weight has {n}",
                b.numel()
            )));
        }
    }
    let mut out = vec![0.0f32; t * n];
    let mut qrow = vec![0i8; k];
    for (xrow, orow) in x.data().chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        let max = xrow.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let sx = if max == 0.0 { 1.0 } else { max / 127.0 };
        for (qv, v) in qrow.iter_mut().zip(xrow) {
            *qv = round_half_away(v / sx).clamp(-127, 127) as i8;
        }
        for (c, o) in orow.iter_mut().enumerate() {
            let acc = dot_i8(&qrow, qw.channel(c));
            *o = acc as f32 * (sx * qw.scales[c]);
        }
        if let Some(b) = bias {
            for (o, bv) in orow.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
    }
    Tensor::new(vec![t, n], out)
}

/// Quantize every weight the policy covers. Pure: returns a new model.
/// Covered tensors that are already int8 are an error (one quantization
/// grid, applied once); an all-false policy returns an identical model.
pub fn quantize_model(m: &Model, policy: QuantPolicy) -> Result<Model> {
    let mut out = m.clone();
    let names: Vec<String> = m
        .tensors()
        .filter(|(name, _)| policy.covers(name))
        .map(|(name, _)| name.to_string())
        .collect();
    for name in names {
        match m.stored(&name)? {
            Stored::F32(t) => {
                let q = quantize_tensor(t)?;
                out.insert(name, Stored::I8(q));
            }
            Stored::I8(_) => {
                return Err(Error::AlreadyQuantized(name));
            }
        }
    }
    Ok(out)
}

/// Policy implied by a model's current storage: a component counts as
/// quantized when all of its policy-covered tensors are int8.
#[must_use]
pub fn derived_policy(m: &Model) -> QuantPolicy {
    let all_i8 = |pred: &dyn Fn(&str) -> bool| {
        let mut any = false;
        for (name, stored) in m.tensors() {
            if quantizable(name) && pred(name) {
                any = true;
                if !stored.is_quantized() {
                    return false;
                }
            }
        }
        any
    };
    QuantPolicy {
        quantize_transformer: all_i8(&|n: &str| n.starts_with("enc.")),
        quantize_classifier: all_i8(&|n: &str| n.starts_with("head.cls.")),
        quantize_frontend: all_i8(&|n: &str| n.starts_with("frontend.")),
        quantize_pos_conv: all_i8(&|n: &str| n == "posconv.w"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use crate::rng::SplitMix64;

    fn t2(shape: [usize; 2], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn worked_channel_example() {
        let w = t2([1, 3], &[0.5, -1.0, 0.25]);
        let q = quantize_tensor(&w).unwrap();
        assert!((q.scales()[0] - 1.0 / 127.0).abs() < 1e-9);
        assert_eq!(q.values(), &[64, -127, 32]); // 63.5 rounds away from zero
    }

    #[test]
    fn zero_tensor_quantizes_exactly() {
        let w = Tensor::zeros(vec![3, 4]);
        let q = quantize_tensor(&w).unwrap();
        assert_eq!(q.scales(), &[1.0, 1.0, 1.0]);
        assert!(q.values().iter().all(|v| *v == 0));
        assert_eq!(dequantize_tensor(&q).data(), w.data());
    }

    #[test]
    fn round_trip_error_bounded_by_half_scale() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..200 {
            let data: Vec<f32> = (0..64).map(|_| rng.next_symmetric_f32(3.0)).collect();
            let w = t2([4, 16], &data);
            let q = quantize_tensor(&w).unwrap();
            let back = dequantize_tensor(&q);
            for c in 0..4 {
                let s = q.scales()[c];
                for i in 0..16 {
                    let err = (w.data()[c * 16 + i] - back.data()[c * 16 + i]).abs();
                    assert!(err <= s / 2.0 + 1e-9, "err {err} > s/2 {}", s / 2.0);
                }
            }
        }
    }

    #[test]
    fn never_produces_negative_128() {
        let mut rng = SplitMix64::new(12);
        for _ in 0..500 {
            let data: Vec<f32> = (0..32).map(|_| rng.next_symmetric_f32(10.0)).collect();
            let q = quantize_tensor(&t2([2, 16], &data)).unwrap();
            assert!(q.values().iter().all(|v| *v != i8::MIN));
        }
    }

    #[test]
    fn second_round_trip_is_bit_lossless() {
        let mut rng = SplitMix64::new(13);
        for _ in 0..500 {
            let data: Vec<f32> = (0..48).map(|_| rng.next_symmetric_f32(2.0)).collect();
            let w = t2([3, 16], &data);
            let once = dequantize_tensor(&quantize_tensor(&w).unwrap());
            let twice = dequantize_tensor(&quantize_tensor(&once).unwrap());
            assert_eq!(once.data(), twice.data());
        }
    }

    #[test]
    fn negation_symmetry() {
        let mut rng = SplitMix64::new(14);
        let data: Vec<f32> = (0..64).map(|_| rng.next_symmetric_f32(1.5)).collect();
        let w = t2([4, 16], &data);
        let neg = t2([4, 16], &data.iter().map(|v| -v).collect::<Vec<_>>());
        let (q, qn) = (quantize_tensor(&w).unwrap(), quantize_tensor(&neg).unwrap());
        assert_eq!(q.scales(), qn.scales());
        for (a, b) in q.values().iter().zip(qn.values()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn power_of_two_scaling_preserves_values() {
        let mut rng = SplitMix64::new(15);
        let data: Vec<f32> = (0..64).map(|_| rng.next_symmetric_f32(1.5)).collect();
        let w = t2([4, 16], &data);
        let q = quantize_tensor(&w).unwrap();
        for k in [-4i32, -1, 1, 3, 8] {
            let alpha = (2.0f32).powi(k);
            let scaled = t2([4, 16], &data.iter().map(|v| v * alpha).collect::<Vec<_>>());
            let qs = quantize_tensor(&scaled).unwrap();
            assert_eq!(q.values(), qs.values());
            for (a, b) in q.scales().iter().zip(qs.scales()) {
                assert_eq!(*a * alpha, *b);
            }
        }
    }

    #[test]
    fn qmatmul_zero_rows_give_exact_zeros() {
        let w = quantize_tensor(&t2([2, 4], &[0.3, -0.7, 0.2, 0.9, 1.0, -0.1, 0.4, -0.5])).unwrap();
        let x = Tensor::zeros(vec![3, 4]);
        let y = qmatmul(&x, &w, None).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn qmatmul_stays_inside_error_envelope() {
        // |float - int8| per output is bounded by
        // sum_k (|x_k| s_w/2 + |w_k| s_x/2 + s_x s_w/4).
        let mut rng = SplitMix64::new(16);
        for _ in 0..100 {
            let xd: Vec<f32> = (0..32).map(|_| rng.next_symmetric_f32(2.0)).collect();
            let wd: Vec<f32> = (0..32).map(|_| rng.next_symmetric_f32(1.0)).collect();
            let x = t2([4, 8], &xd);
            let w = t2([4, 8], &wd);
            let qw = quantize_tensor(&w).unwrap();
            let got = qmatmul(&x, &qw, None).unwrap();
            for i in 0..4 {
                let sx = {
                    let m = x.row(i).iter().fold(0.0f32, |m, v| m.max(v.abs()));
                    if m == 0.0 {
                        1.0
                    } else {
                        m / 127.0
                    }
                };
                for c in 0..4 {
                    let sw = qw.scales()[c];
                    let mut exact = 0.0f64;
                    let mut bound = 0.0f64;
                    for k in 0..8 {
                        let (xv, wv) = (f64::from(x.row(i)[k]), f64::from(w.row(c)[k]));
                        exact += xv * wv;
                        bound += xv.abs() * f64::from(sw) / 2.0
                            + wv.abs() * f64::from(sx) / 2.0
                            + f64::from(sx) * f64::from(sw) / 4.0;
                    }
                    let err = (f64::from(got.row(i)[c]) - exact).abs();
                    assert!(err <= bound + 1e-6, "err {err} > bound {bound}");
                }
            }
        }
    }

    #[test]
    fn model_policy_application() {
        let cfg = ModelConfig::from_kv_text(
            "preset=nano_pos\nnum_layers=2\nhidden=96\nheads=2\nconv_channels=16\nclip_seconds=0.5\n",
        )
        .unwrap();
        let m = build_model(&cfg, 5).unwrap();

        let same = quantize_model(&m, QuantPolicy::none()).unwrap();
        assert_eq!(m, same);

        let q = quantize_model(&m, QuantPolicy::default()).unwrap();
        assert!(q.stored("enc.0.attn.wq").unwrap().is_quantized());
        assert!(q.stored("head.cls.w1").unwrap().is_quantized());
        assert!(!q.stored("frontend.conv0.w").unwrap().is_quantized());
        assert!(!q.stored("posconv.w").unwrap().is_quantized());
        assert!(!q.stored("enc.0.attn.bq").unwrap().is_quantized());
        assert!(!q.stored("head.pool.w").unwrap().is_quantized());
        assert!(!q.stored("proj.w").unwrap().is_quantized());
        assert_eq!(derived_policy(&q), QuantPolicy::default());
        q.structural_validate().unwrap();

        // Double quantization of a covered component is an error.
        assert!(matches!(
            quantize_model(&q, QuantPolicy::default()),
            Err(Error::AlreadyQuantized(_))
        ));

        // But extending coverage to untouched components is fine.
        let q2 = quantize_model(
            &q,
            QuantPolicy {
                quantize_transformer: false,
                quantize_classifier: false,
                quantize_frontend: true,
                quantize_pos_conv: true,
            },
        )
        .unwrap();
        assert!(q2.stored("frontend.conv0.w").unwrap().is_quantized());
        assert!(q2.stored("posconv.w").unwrap().is_quantized());
        assert!(derived_policy(&q2).quantize_frontend);
    }

    #[test]
    fn smaller_when_quantized() {
        let cfg = ModelConfig::from_kv_text(
            "preset=nano\nnum_layers=2\nhidden=96\nheads=2\nconv_channels=16\nclip_seconds=0.5\n",
        )
        .unwrap();
        let m = build_model(&cfg, 5).unwrap();
        let q = quantize_model(&m, QuantPolicy::default()).unwrap();
        assert!(q.weights_bytes() < m.weights_bytes());
    }
}
