//! Cost accounting: exact parameter counts, multiply-accumulate counts for
//! one clip, serialized sizes, byte share per component, and activation
//! memory tracing.
//!
//! Conventions, fixed so numbers are comparable across models:
//! - MACs are counted for a single clip at the model's sample rate
//!   (`clip_seconds` can be overridden). Softmax, layer norm, GELU, tanh and
//!   bias additions count as zero; only multiplies that accumulate count.
//! - Attention is charged per head at full model width: scores and context
//!   each cost `heads * T^2 * hidden` per layer.
//! - Components are the four buckets of the size story: `frontend` (CNN),
//!   `positional_conv`, `transformer`, and `task_layers` (projection,
//!   layer mix, pooling, classifier).

use crate::io::model_file::{dir_entry_bytes, header_text, PRELUDE_BYTES};
use crate::model::{infer_traced, ClipInput, Model, ModelConfig};
use crate::quant::{derived_policy, QuantPolicy};
use crate::Result;

pub const COMPONENTS: [&str; 4] = ["frontend", "positional_conv", "transformer", "task_layers"];

/// One integer per component bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ComponentCounts {
    pub frontend: u64,
    pub positional_conv: u64,
    pub transformer: u64,
    pub task_layers: u64,
}

impl ComponentCounts {
    #[must_use]
    pub fn total(&self) -> u64 {
        self.frontend + self.positional_conv + self.transformer + self.task_layers
    }

    #[must_use]
    pub fn pairs(&self) -> [(&'static str, u64); 4] {
        [
            ("frontend", self.frontend),
            ("positional_conv", self.positional_conv),
            ("transformer", self.transformer),
            ("task_layers", self.task_layers),
        ]
    }

    /// Percent of total per component; all zeros stay zero.
    #[must_use]
    pub fn percentages(&self) -> [(&'static str, f64); 4] {
        let total = self.total() as f64;
        self.pairs()
            .map(|(name, n)| (name, if total == 0.0 { 0.0 } else { 100.0 * n as f64 / total }))
    }

    fn slot(&mut self, name: &str) -> &mut u64 {
        if name.starts_with("frontend.") {
            &mut self.frontend
        } else if name.starts_with("posconv.") {
            &mut self.positional_conv
        } else if name.starts_with("enc.") {
            &mut self.transformer
        } else {
            // proj.* and head.*: the task-specific layers around the encoder.
            &mut self.task_layers
        }
    }
}

/// Stored parameters per component; tied sets count once.
#[must_use]
pub fn count_params(m: &Model) -> ComponentCounts {
    let mut out = ComponentCounts::default();
    for (name, stored) in m.tensors() {
        *out.slot(name) += stored.numel() as u64;
    }
    out
}

/// Parameter counts straight from a config, without materializing weights.
/// Agrees with [`count_params`] on any freshly built model.
#[must_use]
pub fn count_params_config(cfg: &ModelConfig) -> ComponentCounts {
    let mut out = ComponentCounts::default();
    for (name, shape, _) in crate::model::tensor_catalog(cfg, cfg.unique_sets()) {
        *out.slot(&name) += shape.iter().product::<usize>() as u64;
    }
    out
}

/// Multiply-accumulates for one clip of `clip_seconds` audio. Depends only
/// on the architecture, so tying weights does not change it.
pub fn count_macs(m: &Model, clip_seconds: f64, sample_rate_hz: u32) -> Result<ComponentCounts> {
    count_macs_config(m.config(), clip_seconds, sample_rate_hz)
}

pub fn count_macs_config(
    cfg: &ModelConfig,
    clip_seconds: f64,
    sample_rate_hz: u32,
) -> Result<ComponentCounts> {
    let mut out = ComponentCounts::default();
    let c = cfg.conv_channels as u64;
    let h = cfg.hidden as u64;
    let layers = cfg.num_layers as u64;

    let mut t = (f64::from(sample_rate_hz) * clip_seconds).round() as u64;
    let mut c_in = 1u64;
    for (k, s) in cfg.conv_kernels.iter().zip(&cfg.conv_strides) {
        let (k, s) = (*k as u64, *s as u64);
        if t < k {
            return Err(crate::Error::InvalidConfig(format!(
                "clip of {clip_seconds} s is too short for the conv stack"
            )));
        }
        t = (t - k) / s + 1;
        out.frontend += t * c * c_in * k;
        c_in = c;
    }

    out.task_layers += t * c * h; // feature projection
    if cfg.has_positional_conv {
        out.positional_conv +=
            t * h * (h / cfg.pos_conv_groups as u64) * cfg.pos_conv_kernel as u64;
    }

    let heads = cfg.heads as u64;
    let ffn = cfg.ffn_width() as u64;
    let per_layer = 4 * t * h * h + 2 * heads * t * t * h + 2 * t * h * ffn;
    out.transformer += layers * per_layer;

    out.task_layers += (layers + 1) * t * h; // layer mix
    out.task_layers += t * h * h + 2 * t * h; // attention pooling
    out.task_layers += h * h + cfg.num_classes as u64 * h; // classifier
    Ok(out)
}

/// Exact on-disk sizes: as stored in float32, and as stored after applying
/// `policy` to the float weights. Both include the container header and
/// directory, so they match `save` output to the byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SerializedSize {
    pub bytes_float32: u64,
    pub bytes_quantized: u64,
}

#[must_use]
pub fn serialized_size(m: &Model, policy: &QuantPolicy) -> SerializedSize {
    let dir: u64 = m
        .tensors()
        .map(|(name, s)| dir_entry_bytes(name, s.shape().len()))
        .sum();
    let overhead = |p: &QuantPolicy| {
        PRELUDE_BYTES + header_text(m.config(), m.tied_layer_map(), p).len() as u64 + 4 + dir
    };

    let mut float_payload = 0u64;
    let mut quant_payload = 0u64;
    for (name, stored) in m.tensors() {
        let numel = stored.numel() as u64;
        float_payload += 4 * numel;
        quant_payload += if policy.covers(name) {
            numel + 4 * stored.shape()[0] as u64
        } else {
            4 * numel
        };
    }
    SerializedSize {
        bytes_float32: overhead(&QuantPolicy::none()) + float_payload,
        bytes_quantized: overhead(policy) + quant_payload,
    }
}

/// Byte share per component after applying `policy`, in percent.
/// Container overhead is not a component and is excluded.
#[must_use]
pub fn component_breakdown(m: &Model, policy: &QuantPolicy) -> [(&'static str, f64); 4] {
    let mut bytes = ComponentCounts::default();
    for (name, stored) in m.tensors() {
        let numel = stored.numel() as u64;
        *bytes.slot(name) += if policy.covers(name) {
            numel + 4 * stored.shape()[0] as u64
        } else {
            4 * numel
        };
    }
    bytes.percentages()
}

/// Activation memory accounting for one inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryTrace {
    /// High-water mark of live activation bytes during the pass.
    pub peak_live_bytes: u64,
    /// Resident weight bytes (f32 and int8 storage as such).
    pub weights_bytes: u64,
    /// Activation tensors materialized during the pass.
    pub allocations: u64,
}

pub fn trace_memory(m: &Model, clip: &ClipInput) -> Result<MemoryTrace> {
    let (_, arena) = infer_traced(m, clip)?;
    debug_assert_eq!(arena.live_bytes(), 0, "activation accounting must balance");
    Ok(MemoryTrace {
        peak_live_bytes: arena.peak_bytes(),
        weights_bytes: m.weights_bytes(),
        allocations: arena.allocations(),
    })
}

/// Everything `analyze` prints, precomputed.
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub params: ComponentCounts,
    pub macs: ComponentCounts,
    pub mac_clip_seconds: f64,
    pub size: SerializedSize,
    pub size_policy: QuantPolicy,
    pub breakdown: [(&'static str, f64); 4],
}

/// Build the report for a model. `clip_seconds` overrides the config's clip
/// length for the MAC count only. The size/breakdown policy is the model's
/// own storage state if it is quantized, otherwise the deployment default.
pub fn analyze(m: &Model, clip_seconds: Option<f64>) -> Result<AnalysisReport> {
    let cfg = m.config();
    let secs = clip_seconds.unwrap_or(cfg.clip_seconds);
    let policy = if m.any_quantized() {
        derived_policy(m)
    } else {
        QuantPolicy::default()
    };
    Ok(AnalysisReport {
        params: count_params(m),
        macs: count_macs(m, secs, cfg.sample_rate_hz as u32)?,
        mac_clip_seconds: secs,
        size: serialized_size(m, &policy),
        size_policy: policy,
        breakdown: component_breakdown(m, &policy),
    })
}

impl AnalysisReport {
    /// Aligned table, for people.
    #[must_use]
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "costs for one {:.2} s clip; softmax/norm/gelu count as zero MACs\n\n",
            self.mac_clip_seconds
        ));
        s.push_str(&format!(
            "{:<16} {:>12} {:>16} {:>10}\n",
            "component", "params", "macs", "share%"
        ));
        let shares = self.breakdown;
        for (i, (name, p)) in self.params.pairs().iter().enumerate() {
            s.push_str(&format!(
                "{:<16} {:>12} {:>16} {:>10.1}\n",
                name,
                p,
                self.macs.pairs()[i].1,
                shares[i].1
            ));
        }
        s.push_str(&format!(
            "{:<16} {:>12} {:>16} {:>10.1}\n\n",
            "total",
            self.params.total(),
            self.macs.total(),
            100.0
        ));
        s.push_str(&format!(
            "serialized float32:   {:>12} bytes ({:.1} MB)\n",
            self.size.bytes_float32,
            self.size.bytes_float32 as f64 / 1e6
        ));
        s.push_str(&format!(
            "serialized quantized: {:>12} bytes ({:.1} MB)  [transformer={} classifier={} frontend={} pos_conv={}]\n",
            self.size.bytes_quantized,
            self.size.bytes_quantized as f64 / 1e6,
            self.size_policy.quantize_transformer,
            self.size_policy.quantize_classifier,
            self.size_policy.quantize_frontend,
            self.size_policy.quantize_pos_conv,
        ));
        s
    }

    /// One `component.metric = value` per line, for machines.
    #[must_use]
    pub fn render_kv(&self) -> String {
        let mut s = String::new();
        for (name, v) in self.params.pairs() {
            s.push_str(&format!("{name}.params = {v}\n"));
        }
        s.push_str(&format!("total.params = {}\n", self.params.total()));
        for (name, v) in self.macs.pairs() {
            s.push_str(&format!("{name}.macs = {v}\n"));
        }
        s.push_str(&format!("total.macs = {}\n", self.macs.total()));
        for (name, v) in self.breakdown {
            s.push_str(&format!("{name}.share_pct = {v:.3}\n"));
        }
        s.push_str(&format!("total.bytes_float32 = {}\n", self.size.bytes_float32));
        s.push_str(&format!("total.bytes_quantized = {}\n", self.size.bytes_quantized));
        s.push_str(&format!("total.mac_clip_seconds = {}\n", self.mac_clip_seconds));
        s
    }
}
