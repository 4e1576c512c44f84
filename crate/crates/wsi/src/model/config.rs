//! Model configuration: geometry, presets, and the key=value text codec.
//!
//! The same textual form serves as the build-config file format and as the
//! header block inside serialized model files, with one fixed key order so
//! equal configs always produce identical bytes.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Channels of every frontend conv layer (uniform across the stack).
    pub conv_channels: usize,
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    /// Transformer width.
    pub hidden: usize,
    pub num_layers: usize,
    pub heads: usize,
    /// FFN inner width as a multiple of `hidden`.
    pub ffn_ratio: usize,
    /// Consecutive layers sharing one weight set; 1 = untied.
    pub weight_share_group: usize,
    pub has_positional_conv: bool,
    pub pos_conv_kernel: usize,
    pub pos_conv_groups: usize,
    pub num_classes: usize,
    pub sample_rate_hz: usize,
    pub clip_seconds: f64,
}

/// The canonical 7-layer 16 kHz frontend: 320x total stride, 20 ms frames.
pub const FRONTEND_KERNELS: [usize; 7] = [10, 3, 3, 3, 3, 2, 2];
pub const FRONTEND_STRIDES: [usize; 7] = [5, 2, 2, 2, 2, 2, 2];

impl ModelConfig {
    /// Base geometry shared by all presets; callers override size knobs.
    fn base(conv_channels: usize, hidden: usize) -> Self {
        Self {
            conv_channels,
            conv_kernels: FRONTEND_KERNELS.to_vec(),
            conv_strides: FRONTEND_STRIDES.to_vec(),
            hidden,
            num_layers: 12,
            heads: hidden / 48,
            ffn_ratio: 4,
            weight_share_group: 1,
            has_positional_conv: false,
            pos_conv_kernel: 128,
            pos_conv_groups: 16,
            num_classes: 4,
            sample_rate_hz: 16_000,
            clip_seconds: 5.0,
        }
    }

    #[must_use]
    pub fn small_pos() -> Self {
        let mut c = Self::base(386, 576);
        c.has_positional_conv = true;
        c
    }

    #[must_use]
    pub fn micro() -> Self {
        Self::base(256, 384)
    }

    #[must_use]
    pub fn micro_ws() -> Self {
        let mut c = Self::base(128, 384);
        c.weight_share_group = 3;
        c
    }

    #[must_use]
    pub fn nano_pos() -> Self {
        let mut c = Self::base(128, 288);
        c.has_positional_conv = true;
        c
    }

    #[must_use]
    pub fn nano() -> Self {
        Self::base(128, 288)
    }

    #[must_use]
    pub fn nano_ws() -> Self {
        let mut c = Self::base(128, 288);
        c.weight_share_group = 3;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "small_pos" => Ok(Self::small_pos()),
            "micro" => Ok(Self::micro()),
            "micro_ws" => Ok(Self::micro_ws()),
            "nano_pos" => Ok(Self::nano_pos()),
            "nano" => Ok(Self::nano()),
            "nano_ws" => Ok(Self::nano_ws()),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?} (known: small_pos, micro, micro_ws, nano_pos, nano, nano_ws)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels == 0 {
            return Err(Error::InvalidConfig("conv_channels must be >= 1".into()));
        }
        if self.conv_kernels.is_empty() || self.conv_kernels.len() != self.conv_strides.len() {
            return Err(Error::InvalidConfig(format!(
                "conv_kernels ({}) and conv_strides ({}) must be non-empty and equal length",
                self.conv_kernels.len(),
                self.conv_strides.len()
            )));
        }
        if self.conv_kernels.iter().any(|k| *k == 0) || self.conv_strides.iter().any(|s| *s == 0) {
            return Err(Error::InvalidConfig(
                "conv kernels and strides must be >= 1".into(),
            ));
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "heads ({}) must divide hidden ({})",
                self.heads, self.hidden
            )));
        }
        if self.ffn_ratio == 0 {
            return Err(Error::InvalidConfig("ffn_ratio must be >= 1".into()));
        }
        if self.weight_share_group == 0 {
            return Err(Error::InvalidConfig(
                "weight_share_group must be >= 1".into(),
            ));
        }
        if self.has_positional_conv {
            if self.pos_conv_kernel == 0 || self.pos_conv_groups == 0 {
                return Err(Error::InvalidConfig(
                    "positional conv kernel and groups must be >= 1".into(),
                ));
            }
            if self.hidden % self.pos_conv_groups != 0 {
                return Err(Error::InvalidConfig(format!(
                    "pos_conv_groups ({}) must divide hidden ({})",
                    self.pos_conv_groups, self.hidden
                )));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be >= 2".into()));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample_rate_hz must be >= 1".into()));
        }
        if !(self.clip_seconds.is_finite() && self.clip_seconds > 0.0) {
            return Err(Error::InvalidConfig("clip_seconds must be > 0".into()));
        }
        Ok(())
    }

    /// Samples per channel in one clip window.
    #[must_use]
    pub fn clip_samples(&self) -> usize {
        (self.sample_rate_hz as f64 * self.clip_seconds).round() as usize
    }

    /// Frames the frontend produces for one clip window.
    pub fn frontend_frames(&self) -> Result<usize> {
        let mut t = self.clip_samples();
        for (k, s) in self.conv_kernels.iter().zip(&self.conv_strides) {
            t = crate::kernels::conv1d_out_len(t, *k, *s, (0, 0))?;
        }
        Ok(t)
    }

    #[must_use]
    pub fn ffn_width(&self) -> usize {
        self.hidden * self.ffn_ratio
    }

    /// Number of distinct transformer weight sets under the tie grouping.
    #[must_use]
    pub fn unique_sets(&self) -> usize {
        self.num_layers.div_ceil(self.weight_share_group)
    }

    /// layer -> weight-set index: `floor(layer / group)`.
    #[must_use]
    pub fn tied_layer_map(&self) -> Vec<usize> {
        (0..self.num_layers)
            .map(|l| l / self.weight_share_group)
            .collect()
    }

    /// Serialize as key=value lines in the fixed canonical order.
    #[must_use]
    pub fn to_kv_text(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "conv_channels={}\nconv_kernels={}\nconv_strides={}\nhidden={}\nnum_layers={}\n\
             heads={}\nffn_ratio={}\nweight_share_group={}\nhas_positional_conv={}\n\
             pos_conv_kernel={}\npos_conv_groups={}\nnum_classes={}\nsample_rate_hz={}\n\
             clip_seconds={}\n",
            self.conv_channels,
            join(&self.conv_kernels),
            join(&self.conv_strides),
            self.hidden,
            self.num_layers,
            self.heads,
            self.ffn_ratio,
            self.weight_share_group,
            self.has_positional_conv,
            self.pos_conv_kernel,
            self.pos_conv_groups,
            self.num_classes,
            self.sample_rate_hz,
            self.clip_seconds,
        )
    }

    /// Parse key=value text. Starts from the `preset` line if present (all
    /// other keys then override it), otherwise from [`ModelConfig::nano`].
    /// Unknown keys are errors; `#` starts a comment.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let kind = "config";
        let mut cfg: Option<Self> = None;
        let mut overrides: Vec<(usize, String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file_kind: kind,
                line: idx + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if key == "preset" {
                if cfg.is_some() {
                    return Err(Error::Parse {
                        file_kind: kind,
                        line: idx + 1,
                        msg: "preset given twice".into(),
                    });
                }
                cfg = Some(Self::preset(&value)?);
            } else {
                overrides.push((idx + 1, key, value));
            }
        }
        let mut cfg = cfg.unwrap_or_else(Self::nano);
        for (line, key, value) in overrides {
            cfg.apply_kv(&key, &value)
                .map_err(|e| Error::Parse {
                    file_kind: kind,
                    line,
                    msg: e.to_string(),
                })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub(crate) fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn usize_of(key: &str, v: &str) -> Result<usize> {
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: not an integer: {v:?}")))
        }
        fn list_of(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',').map(|p| usize_of(key, p.trim())).collect()
        }
        match key {
            "conv_channels" => self.conv_channels = usize_of(key, value)?,
            "conv_kernels" => self.conv_kernels = list_of(key, value)?,
            "conv_strides" => self.conv_strides = list_of(key, value)?,
            "hidden" => self.hidden = usize_of(key, value)?,
            "num_layers" => self.num_layers = usize_of(key, value)?,
            "heads" => self.heads = usize_of(key, value)?,
            "ffn_ratio" => self.ffn_ratio = usize_of(key, value)?,
            "weight_share_group" => self.weight_share_group = usize_of(key, value)?,
            "has_positional_conv" => {
                self.has_positional_conv = match value {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "has_positional_conv: expected true/false, got {value:?}"
                        )))
                    }
                }
            }
            "pos_conv_kernel" => self.pos_conv_kernel = usize_of(key, value)?,
            "pos_conv_groups" => self.pos_conv_groups = usize_of(key, value)?,
            "num_classes" => self.num_classes = usize_of(key, value)?,
            "sample_rate_hz" => self.sample_rate_hz = usize_of(key, value)?,
            "clip_seconds" => {
                self.clip_seconds = value
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("clip_seconds: not a number: {value:?}")))?;
            }
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["small_pos", "micro", "micro_ws", "nano_pos", "nano", "nano_ws"] {
            let c = ModelConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.num_layers, 12);
            assert_eq!(c.heads, c.hidden / 48);
        }
        assert!(ModelConfig::preset("giant").is_err());
    }

    #[test]
    fn five_second_clip_yields_249_frames() {
        let c = ModelConfig::nano();
        assert_eq!(c.clip_samples(), 80_000);
        assert_eq!(c.frontend_frames().unwrap(), 249);
    }

    #[test]
    fn tie_grouping_arithmetic() {
        let c = ModelConfig::nano_ws();
        assert_eq!(c.unique_sets(), 4);
        assert_eq!(c.tied_layer_map(), vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
        // Short last group: 7 layers / group 3 -> 3 sets.
        let mut c = ModelConfig::nano();
        c.num_layers = 7;
        c.weight_share_group = 3;
        assert_eq!(c.unique_sets(), 3);
        assert_eq!(c.tied_layer_map(), vec![0, 0, 0, 1, 1, 1, 2]);
    }

    #[test]
    fn kv_roundtrip() {
        let c = ModelConfig::micro_ws();
        let text = c.to_kv_text();
        let back = ModelConfig::from_kv_text(&text).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn kv_preset_with_override() {
        let c = ModelConfig::from_kv_text("preset=nano_ws\nnum_layers=4\n# comment\n").unwrap();
        assert_eq!(c.num_layers, 4);
        assert_eq!(c.weight_share_group, 3);
        assert_eq!(c.unique_sets(), 2);
    }

    #[test]
    fn kv_rejects_unknown_keys_and_bad_lines() {
        assert!(ModelConfig::from_kv_text("flux_capacitance=9\n").is_err());
        assert!(ModelConfig::from_kv_text("just words\n").is_err());
        assert!(ModelConfig::from_kv_text("hidden=abc\n").is_err());
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut c = ModelConfig::nano();
        c.heads = 7; // 288 % 7 != 0
        assert!(c.validate().is_err());
        let mut c = ModelConfig::nano();
        c.weight_share_group = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::nano();
        c.conv_strides.pop();
        assert!(c.validate().is_err());
        // zero layers is a valid degenerate encoder
        let mut c = ModelConfig::nano();
        c.num_layers = 0;
        c.validate().unwrap();
        assert_eq!(c.unique_sets(), 0);
    }
}
