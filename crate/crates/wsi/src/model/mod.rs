//! Model container: config, tied layer map, named weight tensors.
//!
//! Weights live in a sorted name -> tensor map. Tied transformer layers
//! store each unique weight set once under `enc.{set}.*`; the
//! `tied_layer_map` sends layer index to set index. A tensor is either f32
//! or int8-with-scales; which ones may be int8 is decided by the
//! quantization policy, never ad hoc.

pub mod config;
mod forward;

pub use config::ModelConfig;
pub use forward::{encoder_forward, frontend_forward, head_forward, infer, infer_traced, Inference};

use std::collections::BTreeMap;

use crate::quant::QuantizedTensor;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// The closed label set of the 4-way classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassLabel {
    Backchannel,
    FailedInterruption,
    Interruption,
    Laughter,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Backchannel,
        ClassLabel::FailedInterruption,
        ClassLabel::Interruption,
        ClassLabel::Laughter,
    ];

    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Backchannel => "backchannel",
            ClassLabel::FailedInterruption => "failed_interruption",
            ClassLabel::Interruption => "interruption",
            ClassLabel::Laughter => "laughter",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown class label {s:?} (known: backchannel, failed_interruption, interruption, laughter)"
                ))
            })
    }

    #[must_use]
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Backchannel => 0,
            ClassLabel::FailedInterruption => 1,
            ClassLabel::Interruption => 2,
            ClassLabel::Laughter => 3,
        }
    }
}

/// One 5 s stereo clip window, samples normalized to [-1, 1].
#[derive(Debug, Clone)]
pub struct ClipInput {
    left: Vec<f32>,
    right: Vec<f32>,
}

impl ClipInput {
    pub fn new(left: Vec<f32>, right: Vec<f32>) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::BadClip(format!(
                "channel lengths differ: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        if left.is_empty() {
            return Err(Error::BadClip("empty clip".into()));
        }
        for v in left.iter().chain(&right) {
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::BadClip(format!("sample {v} outside [-1, 1]")));
            }
        }
        Ok(Self { left, right })
    }

    /// Deterministic noise clip; all sample randomness comes from `seed`.
    #[must_use]
    pub fn synthetic(seed: u64, samples: usize) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut gen = |n: usize| {
            (0..n)
                .map(|_| (rng.next_f64() * 2.0 - 1.0) as f32)
                .collect::<Vec<f32>>()
        };
        let left = gen(samples);
        let right = gen(samples);
        Self { left, right }
    }

    #[must_use]
    pub fn silence(samples: usize) -> Self {
        Self {
            left: vec![0.0; samples],
            right: vec![0.0; samples],
        }
    }

    #[must_use]
    pub fn samples_per_channel(&self) -> usize {
        self.left.len()
    }

    #[must_use]
    pub fn left(&self) -> &[f32] {
        &self.left
    }

    #[must_use]
    pub fn right(&self) -> &[f32] {
        &self.right
    }

    /// Mono downmix: left + right, per sample.
    #[must_use]
    pub fn downmix(&self) -> Vec<f32> {
        self.left
            .iter()
            .zip(&self.right)
            .map(|(l, r)| l + r)
            .collect()
    }
}

/// Class probabilities from one inference; non-negative, summing to ~1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    probs: Vec<f32>,
}

impl ClassScores {
    pub(crate) fn new(probs: Vec<f32>) -> Self {
        Self { probs }
    }

    #[must_use]
    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    /// Index of the highest probability; first wins on exact ties.
    #[must_use]
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Predicted label; None when the model is not a 4-class head.
    #[must_use]
    pub fn label(&self) -> Option<ClassLabel> {
        (self.probs.len() == 4).then(|| ClassLabel::ALL[self.argmax()])
    }
}

/// A stored weight: full precision or int8 with per-channel scales.
#[derive(Debug, Clone, PartialEq)]
pub enum Stored {
    F32(Tensor),
    I8(QuantizedTensor),
}

impl Stored {
    #[must_use]
    pub fn shape(&self) -> &[usize] {
        match self {
            Stored::F32(t) => t.shape(),
            Stored::I8(q) => q.shape(),
        }
    }

    #[must_use]
    pub fn numel(&self) -> usize {
        match self {
            Stored::F32(t) => t.numel(),
            Stored::I8(q) => q.numel(),
        }
    }

    #[must_use]
    pub fn is_quantized(&self) -> bool {
        matches!(self, Stored::I8(_))
    }

    /// In-memory / on-disk payload bytes: 4 per f32, 1 per int8 value plus
    /// 4 per scale channel.
    #[must_use]
    pub fn payload_bytes(&self) -> u64 {
        match self {
            Stored::F32(t) => 4 * t.numel() as u64,
            Stored::I8(q) => q.numel() as u64 + 4 * q.scales().len() as u64,
        }
    }
}

/// How a tensor is initialized at build time.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in [-sqrt(1/fan_in), sqrt(1/fan_in)].
    Weight { fan_in: usize },
    Zeros,
    Ones,
}

/// Name, shape, and init of every tensor a config implies, in build order
/// (also the RNG consumption order, so it is part of the format).
pub fn tensor_catalog(config: &ModelConfig, num_sets: usize) -> Vec<(String, Vec<usize>, Init)> {
    let mut catalog = Vec::new();
    let c = config.conv_channels;
    let h = config.hidden;
    for (i, (k, _)) in config
        .conv_kernels
        .iter()
        .zip(&config.conv_strides)
        .enumerate()
    {
        let c_in = if i == 0 { 1 } else { c };
        catalog.push((
            format!("frontend.conv{i}.w"),
            vec![c, c_in, *k],
            Init::Weight { fan_in: c_in * k },
        ));
    }
    catalog.push(("proj.w".into(), vec![h, c], Init::Weight { fan_in: c }));
    catalog.push(("proj.b".into(), vec![h], Init::Zeros));
    catalog.push(("proj.ln.g".into(), vec![h], Init::Ones));
    catalog.push(("proj.ln.b".into(), vec![h], Init::Zeros));
    if config.has_positional_conv {
        let cg = h / config.pos_conv_groups;
        catalog.push((
            "posconv.w".into(),
            vec![h, cg, config.pos_conv_kernel],
            Init::Weight {
                fan_in: cg * config.pos_conv_kernel,
            },
        ));
        catalog.push(("posconv.b".into(), vec![h], Init::Zeros));
    }
    let ffn = config.ffn_width();
    for s in 0..num_sets {
        let w = |part: &str, shape: Vec<usize>, fan_in: usize| {
            (format!("enc.{s}.{part}"), shape, Init::Weight { fan_in })
        };
        let z = |part: &str, shape: Vec<usize>| (format!("enc.{s}.{part}"), shape, Init::Zeros);
        let one = |part: &str, shape: Vec<usize>| (format!("enc.{s}.{part}"), shape, Init::Ones);
        catalog.push(w("attn.wq", vec![h, h], h));
        catalog.push(z("attn.bq", vec![h]));
        catalog.push(w("attn.wk", vec![h, h], h));
        catalog.push(z("attn.bk", vec![h]));
        catalog.push(w("attn.wv", vec![h, h], h));
        catalog.push(z("attn.bv", vec![h]));
        catalog.push(w("attn.wo", vec![h, h], h));
        catalog.push(z("attn.bo", vec![h]));
        catalog.push(one("ln1.g", vec![h]));
        catalog.push(z("ln1.b", vec![h]));
        catalog.push(w("ffn.w1", vec![ffn, h], h));
        catalog.push(z("ffn.b1", vec![ffn]));
        catalog.push(w("ffn.w2", vec![h, ffn], ffn));
        catalog.push(z("ffn.b2", vec![h]));
        catalog.push(one("ln2.g", vec![h]));
        catalog.push(z("ln2.b", vec![h]));
    }
    // The layer-sum starts unbiased: zero logits = uniform layer weights.
    catalog.push((
        "head.layer_logits".into(),
        vec![config.num_layers + 1],
        Init::Zeros,
    ));
    catalog.push(("head.pool.w".into(), vec![h, h], Init::Weight { fan_in: h }));
    catalog.push(("head.pool.b".into(), vec![h], Init::Zeros));
    catalog.push(("head.pool.v".into(), vec![h], Init::Weight { fan_in: h }));
    catalog.push(("head.cls.w1".into(), vec![h, h], Init::Weight { fan_in: h }));
    catalog.push(("head.cls.b1".into(), vec![h], Init::Zeros));
    catalog.push((
        "head.cls.w2".into(),
        vec![config.num_classes, h],
        Init::Weight { fan_in: h },
    ));
    catalog.push(("head.cls.b2".into(), vec![config.num_classes], Init::Zeros));
    catalog
}

/// Weight-matrix name prefixes that the quantization policy may cover.
/// Everything else (biases, layer norms, layer-sum logits, pooling, the
/// feature projection) stays f32 unconditionally.
#[must_use]
pub fn quantizable(name: &str) -> bool {
    if name.starts_with("frontend.conv") {
        return name.ends_with(".w");
    }
    if name == "posconv.w" {
        return true;
    }
    if name.starts_with("enc.") {
        return name.ends_with("attn.wq")
            || name.ends_with("attn.wk")
            || name.ends_with("attn.wv")
            || name.ends_with("attn.wo")
            || name.ends_with("ffn.w1")
            || name.ends_with("ffn.w2");
    }
    name == "head.cls.w1" || name == "head.cls.w2"
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    tied_layer_map: Vec<usize>,
    tensors: BTreeMap<String, Stored>,
}

impl Model {
    pub(crate) fn from_parts(
        config: ModelConfig,
        tied_layer_map: Vec<usize>,
        tensors: BTreeMap<String, Stored>,
    ) -> Self {
        Self {
            config,
            tied_layer_map,
            tensors,
        }
    }

    #[must_use]
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    #[must_use]
    pub fn tied_layer_map(&self) -> &[usize] {
        &self.tied_layer_map
    }

    /// Number of stored transformer weight sets.
    #[must_use]
    pub fn num_sets(&self) -> usize {
        self.tied_layer_map.iter().map(|s| s + 1).max().unwrap_or(0)
    }

    /// Weight-set index backing a layer.
    #[must_use]
    pub fn layer_set(&self, layer: usize) -> usize {
        self.tied_layer_map[layer]
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Stored)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    #[must_use]
    pub fn get(&self, name: &str) -> Option<&Stored> {
        self.tensors.get(name)
    }

    pub fn stored(&self, name: &str) -> Result<&Stored> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::CorruptModel(format!("missing tensor {name:?}")))
    }

    /// The tensor by name, required to be f32.
    pub fn f32_tensor(&self, name: &str) -> Result<&Tensor> {
        match self.stored(name)? {
            Stored::F32(t) => Ok(t),
            Stored::I8(_) => Err(Error::CorruptModel(format!(
                "tensor {name:?} is quantized where f32 is required"
            ))),
        }
    }

    pub(crate) fn insert(&mut self, name: String, value: Stored) {
        self.tensors.insert(name, value);
    }

    /// Total stored parameters; tied sets count once.
    #[must_use]
    pub fn param_count(&self) -> u64 {
        self.tensors.values().map(|t| t.numel() as u64).sum()
    }

    /// In-memory weight bytes (int8 payloads plus their scale tables).
    #[must_use]
    pub fn weights_bytes(&self) -> u64 {
        self.tensors.values().map(Stored::payload_bytes).sum()
    }

    #[must_use]
    pub fn any_quantized(&self) -> bool {
        self.tensors.values().any(Stored::is_quantized)
    }

    /// Every tensor the config implies, with the right shape and storage
    /// kind; no extras; a coherent tie map. The loader's structural gate.
    pub fn structural_validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.tied_layer_map.len() != self.config.num_layers {
            return Err(Error::CorruptModel(format!(
                "tie map has {} entries for {} layers",
                self.tied_layer_map.len(),
                self.config.num_layers
            )));
        }
        // Canonical maps start at set 0 and step by at most 1: exactly the
        // shapes floor(layer/group) and layer selections can produce.
        for (l, s) in self.tied_layer_map.iter().enumerate() {
            let prev = if l == 0 { None } else { Some(self.tied_layer_map[l - 1]) };
            let ok = match prev {
                None => *s == 0,
                Some(p) => *s == p || *s == p + 1,
            };
            if !ok {
                return Err(Error::CorruptModel(format!(
                    "tie map {:?} is not a contiguous grouping",
                    self.tied_layer_map
                )));
            }
        }
        let sets = self.num_sets();
        let catalog = tensor_catalog(&self.config, sets);
        if catalog.len() != self.tensors.len() {
            return Err(Error::CorruptModel(format!(
                "expected {} tensors, found {}",
                catalog.len(),
                self.tensors.len()
            )));
        }
        for (name, shape, _) in &catalog {
            let stored = self.stored(name)?;
            if stored.shape() != shape.as_slice() {
                return Err(Error::CorruptModel(format!(
                    "tensor {name:?}: expected shape {:?}, got {:?}",
                    shape,
                    stored.shape()
                )));
            }
            if stored.is_quantized() && !quantizable(name) {
                return Err(Error::CorruptModel(format!(
                    "tensor {name:?} must not be quantized"
                )));
            }
            if let Stored::I8(q) = stored {
                if q.scales().len() != shape[0] {
                    return Err(Error::CorruptModel(format!(
                        "tensor {name:?}: {} scales for {} output channels",
                        q.scales().len(),
                        shape[0]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Build a model with freshly initialized weights. Same (config, seed) gives
/// bit-identical tensors on every platform.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape, init) in tensor_catalog(config, config.unique_sets()) {
        let numel: usize = shape.iter().product();
        let data = match init {
            Init::Weight { fan_in } => {
                let bound = (1.0 / fan_in as f32).sqrt();
                (0..numel)
                    .map(|_| rng.next_symmetric_f32(bound))
                    .collect()
            }
            Init::Zeros => vec![0.0; numel],
            Init::Ones => vec![1.0; numel],
        };
        tensors.insert(name, Stored::F32(Tensor::new(shape, data)?));
    }
    Ok(Model::from_parts(
        config.clone(),
        config.tied_layer_map(),
        tensors,
    ))
}
