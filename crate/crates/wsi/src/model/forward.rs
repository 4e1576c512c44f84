//! Forward pass: frontend convs -> projection -> encoder -> pooled head.
//!
//! One code path serves float and quantized models: every projection goes
//! through [`apply_linear`], which dispatches on how the weight is stored
//! (f32 matmul or dynamic-activation int8 matmul). Convolutions always
//! execute in f32; an int8-stored conv weight is dequantized on entry, so
//! quantizing convs changes the stored bytes, never the arithmetic path.
//!
//! Activation lifetimes are metered through an [`Arena`] tracker: every
//! tensor the pass materializes is tracked when created and released when
//! consumed, which is what makes `trace_memory` peaks exact and repeatable.

use crate::arena::Arena;
use crate::kernels::{
    attention_core, conv1d, gelu_inplace, layer_norm, linear, softmax_inplace,
};
use crate::model::{ClassScores, ClipInput, Model, Stored};
use crate::quant::{dequantize_tensor, qmatmul};
use crate::tensor::Tensor;
use crate::{Error, Result};

const LN_EPS: f32 = 1e-5;

/// Result of one inference: class probabilities plus the pooled embedding
/// (the pre-classifier utterance vector).
#[derive(Debug, Clone)]
pub struct Inference {
    pub scores: ClassScores,
    pub embedding: Vec<f32>,
}

/// x[T,IN] through the named projection, f32 or int8 according to storage.
fn apply_linear(m: &Model, wname: &str, bname: &str, x: &Tensor) -> Result<Tensor> {
    let bias = m.f32_tensor(bname)?;
    match m.stored(wname)? {
        Stored::F32(w) => linear(x, w, Some(bias)),
        Stored::I8(q) => qmatmul(x, q, Some(bias)),
    }
}

fn conv_weight(m: &Model, name: &str) -> Result<Tensor> {
    match m.stored(name)? {
        Stored::F32(w) => Ok(w.clone()),
        Stored::I8(q) => Ok(dequantize_tensor(q)),
    }
}

fn transpose(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("transpose preserves element count")
}

/// CNN frontend over the mono downmix: returns frames `[T, conv_channels]`.
pub(crate) fn frontend_with_arena(m: &Model, clip: &ClipInput, arena: &mut Arena) -> Result<Tensor> {
    let cfg = m.config();
    let want = cfg.clip_samples();
    if clip.samples_per_channel() != want {
        return Err(Error::BadClip(format!(
            "model expects {want} samples per channel ({} s at {} Hz), clip has {}",
            cfg.clip_seconds,
            cfg.sample_rate_hz,
            clip.samples_per_channel()
        )));
    }
    let mono = clip.downmix();
    arena.track(mono.len());
    let mut x = Tensor::new(vec![1, mono.len()], mono)?;
    for (i, (_k, stride)) in cfg.conv_kernels.iter().zip(&cfg.conv_strides).enumerate() {
        let w = conv_weight(m, &format!("frontend.conv{i}.w"))?;
        let mut y = conv1d(&x, &w, None, *stride, 1, (0, 0))?;
        gelu_inplace(y.data_mut());
        arena.track(y.numel());
        arena.release(x.numel());
        x = y;
    }
    let frames = transpose(&x);
    arena.track(frames.numel());
    arena.release(x.numel());
    Ok(frames)
}

/// Transformer encoder. Consumes the frontend frames and returns all
/// `num_layers + 1` intermediate outputs: the block-0 input (projection,
/// norm, and positional conv applied) followed by each block's output.
pub(crate) fn encoder_with_arena(
    m: &Model,
    frames: Tensor,
    arena: &mut Arena,
) -> Result<Vec<Tensor>> {
    let cfg = m.config();
    let mut x = apply_linear(m, "proj.w", "proj.b", &frames)?;
    arena.track(x.numel());
    arena.release(frames.numel());
    drop(frames);

    let g = m.f32_tensor("proj.ln.g")?;
    let b = m.f32_tensor("proj.ln.b")?;
    let normed = layer_norm(&x, g, b, LN_EPS)?;
    arena.track(normed.numel());
    arena.release(x.numel());
    x = normed;

    if cfg.has_positional_conv {
        let k = cfg.pos_conv_kernel;
        let xt = transpose(&x); // [H, T]
        arena.track(xt.numel());
        let w = conv_weight(m, "posconv.w")?;
        let bias = m.f32_tensor("posconv.b")?;
        let p = conv1d(&xt, &w, Some(bias), 1, cfg.pos_conv_groups, ((k - 1) / 2, k / 2))?;
        arena.track(p.numel());
        arena.release(xt.numel());
        let pt = transpose(&p);
        arena.track(pt.numel());
        arena.release(p.numel());
        for (v, d) in x.data_mut().iter_mut().zip(pt.data()) {
            *v += d;
        }
        arena.release(pt.numel());
    }

    let mut outputs = Vec::with_capacity(cfg.num_layers + 1);
    outputs.push(x.clone());
    arena.track(x.numel());

    for layer in 0..cfg.num_layers {
        let s = m.layer_set(layer);
        let name = |part: &str| format!("enc.{s}.{part}");

        let q = apply_linear(m, &name("attn.wq"), &name("attn.bq"), &x)?;
        let k = apply_linear(m, &name("attn.wk"), &name("attn.bk"), &x)?;
        let v = apply_linear(m, &name("attn.wv"), &name("attn.bv"), &x)?;
        arena.track(q.numel());
        arena.track(k.numel());
        arena.track(v.numel());
        let ctx = attention_core(&q, &k, &v, cfg.heads)?;
        arena.track(ctx.numel());
        arena.release(q.numel());
        arena.release(k.numel());
        arena.release(v.numel());
        drop((q, k, v));

        let mut attn = apply_linear(m, &name("attn.wo"), &name("attn.bo"), &ctx)?;
        arena.track(attn.numel());
        arena.release(ctx.numel());
        drop(ctx);

        // Post-layer-norm residual: x = LN(x + attn).
        for (a, xv) in attn.data_mut().iter_mut().zip(x.data()) {
            *a += xv;
        }
        let g1 = m.f32_tensor(&name("ln1.g"))?;
        let b1 = m.f32_tensor(&name("ln1.b"))?;
        let mid = layer_norm(&attn, g1, b1, LN_EPS)?;
        arena.track(mid.numel());
        arena.release(attn.numel());
        arena.release(x.numel());
        drop(attn);

        let mut h1 = apply_linear(m, &name("ffn.w1"), &name("ffn.b1"), &mid)?;
        gelu_inplace(h1.data_mut());
        arena.track(h1.numel());
        let mut h2 = apply_linear(m, &name("ffn.w2"), &name("ffn.b2"), &h1)?;
        arena.track(h2.numel());
        arena.release(h1.numel());
        drop(h1);

        for (a, xv) in h2.data_mut().iter_mut().zip(mid.data()) {
            *a += xv;
        }
        let g2 = m.f32_tensor(&name("ln2.g"))?;
        let b2 = m.f32_tensor(&name("ln2.b"))?;
        x = layer_norm(&h2, g2, b2, LN_EPS)?;
        arena.track(x.numel());
        arena.release(h2.numel());
        arena.release(mid.numel());
        drop(h2);

        outputs.push(x.clone());
        arena.track(x.numel());
    }
    arena.release(x.numel());
    Ok(outputs)
}

/// Weighted layer sum, additive attention pooling, classifier.
/// Returns class probabilities and the pooled embedding.
pub(crate) fn head_with_arena(
    m: &Model,
    outputs: &[Tensor],
    arena: &mut Arena,
) -> Result<(ClassScores, Vec<f32>)> {
    let logits = m.f32_tensor("head.layer_logits")?;
    if logits.numel() != outputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "layer-sum logits cover {} outputs, encoder produced {}",
            logits.numel(),
            outputs.len()
        )));
    }
    let mut weights = logits.data().to_vec();
    softmax_inplace(&mut weights);

    let (t, h) = (outputs[0].rows(), outputs[0].cols());
    let mut mixed = Tensor::zeros(vec![t, h]);
    arena.track(mixed.numel());
    for (w, out) in weights.iter().zip(outputs) {
        for (acc, v) in mixed.data_mut().iter_mut().zip(out.data()) {
            *acc = w.mul_add(*v, *acc);
        }
    }

    // score_t = v . tanh(W h_t + b)
    let mut u = apply_linear(m, "head.pool.w", "head.pool.b", &mixed)?;
    arena.track(u.numel());
    for v in u.data_mut() {
        *v = v.tanh();
    }
    let vvec = m.f32_tensor("head.pool.v")?;
    let mut att: Vec<f32> = (0..t)
        .map(|i| crate::kernels::dot(u.row(i), vvec.data()))
        .collect();
    softmax_inplace(&mut att);
    arena.release(u.numel());
    drop(u);

    let mut pooled = vec![0.0f32; h];
    for (a, i) in att.iter().zip(0..t) {
        for (p, v) in pooled.iter_mut().zip(mixed.row(i)) {
            *p = a.mul_add(*v, *p);
        }
    }
    arena.release(mixed.numel());
    drop(mixed);

    let pooled_t = Tensor::new(vec![1, h], pooled.clone())?;
    let mut z1 = apply_linear(m, "head.cls.w1", "head.cls.b1", &pooled_t)?;
    gelu_inplace(z1.data_mut());
    let z2 = apply_linear(m, "head.cls.w2", "head.cls.b2", &z1)?;
    let mut probs = z2.into_data();
    softmax_inplace(&mut probs);
    Ok((ClassScores::new(probs), pooled))
}

/// Full inference with an externally supplied arena tracker.
pub(crate) fn infer_with_arena(m: &Model, clip: &ClipInput, arena: &mut Arena) -> Result<Inference> {
    let frames = frontend_with_arena(m, clip, arena)?;
    let outputs = encoder_with_arena(m, frames, arena)?;
    let (scores, embedding) = head_with_arena(m, &outputs, arena)?;
    for o in &outputs {
        arena.release(o.numel());
    }
    Ok(Inference { scores, embedding })
}

/// CNN frontend over the mono downmix: frames `[T, conv_channels]`.
pub fn frontend_forward(m: &Model, clip: &ClipInput) -> Result<Tensor> {
    frontend_with_arena(m, clip, &mut Arena::new())
}

/// Encoder outputs for given frames: `num_layers + 1` tensors, the block-0
/// input first.
pub fn encoder_forward(m: &Model, frames: Tensor) -> Result<Vec<Tensor>> {
    encoder_with_arena(m, frames, &mut Arena::new())
}

/// Head over encoder outputs: (class probabilities, pooled embedding).
pub fn head_forward(m: &Model, outputs: &[Tensor]) -> Result<(ClassScores, Vec<f32>)> {
    head_with_arena(m, outputs, &mut Arena::new())
}

/// One clip through the whole model.
pub fn infer(m: &Model, clip: &ClipInput) -> Result<Inference> {
    infer_with_arena(m, clip, &mut Arena::new())
}

/// Like [`infer`], also returning the arena tracker for memory analysis.
pub fn infer_traced(m: &Model, clip: &ClipInput) -> Result<(Inference, Arena)> {
    let mut arena = Arena::new();
    let inf = infer_with_arena(m, clip, &mut arena)?;
    Ok((inf, arena))
}
