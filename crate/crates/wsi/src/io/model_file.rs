//! Model container ("WSI1"): a self-describing single file holding the
//! config, the tie map, the quantization state, and every tensor.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "WSI1" | format_version u16 | header_len u32 | header (UTF-8 kv)
//! dir_count u32
//! per entry, sorted by name:
//!   name_len u16 | name | dtype u8 (0=f32, 1=i8) | rank u8 | dims u32*rank
//!   offset u64 | length u64          (offset relative to payload start)
//! payload bytes
//! ```
//!
//! An i8 payload is the per-channel scale table (f32) followed by the int8
//! values. The writer packs entries back to back in directory order and the
//! reader insists on exactly that, so equal models produce equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::model::{Model, ModelConfig, Stored};
use crate::quant::{derived_policy, QuantPolicy, QuantizedTensor};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"WSI1";
pub const FORMAT_VERSION: u16 = 1;

/// magic + version + header_len
pub(crate) const PRELUDE_BYTES: u64 = 10;

pub(crate) fn dir_entry_bytes(name: &str, rank: usize) -> u64 {
    2 + name.len() as u64 + 1 + 1 + 4 * rank as u64 + 8 + 8
}

pub(crate) fn header_text(config: &ModelConfig, map: &[usize], policy: &QuantPolicy) -> String {
    let csv: Vec<String> = map.iter().map(usize::to_string).collect();
    format!(
        "{}quantize_transformer={}\nquantize_classifier={}\nquantize_frontend={}\n\
         quantize_pos_conv={}\ntied_layer_map={}\n",
        config.to_kv_text(),
        policy.quantize_transformer,
        policy.quantize_classifier,
        policy.quantize_frontend,
        policy.quantize_pos_conv,
        csv.join(",")
    )
}

pub fn model_to_bytes(m: &Model) -> Vec<u8> {
    let header = header_text(m.config(), m.tied_layer_map(), &derived_policy(m));
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());

    let entries: Vec<(&str, &Stored)> = m.tensors().collect();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, stored) in &entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::from(stored.is_quantized()));
        let shape = stored.shape();
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        let length = stored.payload_bytes();
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&length.to_le_bytes());
        offset += length;
    }
    for (_, stored) in &entries {
        match stored {
            Stored::F32(t) => {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Stored::I8(q) => {
                for s in q.scales() {
                    out.extend_from_slice(&s.to_le_bytes());
                }
                out.extend(q.values().iter().map(|v| *v as u8));
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptModel("file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct DirEntry {
    name: String,
    quantized: bool,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

fn parse_header(text: &str) -> Result<(ModelConfig, Vec<usize>, QuantPolicy)> {
    let mut config_lines = String::new();
    let mut policy = QuantPolicy::none();
    let mut map: Option<Vec<usize>> = None;
    let mut policy_keys = 0;
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::CorruptModel(format!("header line {line:?} is not key=value")))?;
        let flag = |v: &str| -> Result<bool> {
            v.parse::<bool>()
                .map_err(|_| Error::CorruptModel(format!("header {key} has non-boolean {v:?}")))
        };
        match key {
            "quantize_transformer" => {
                policy.quantize_transformer = flag(value)?;
                policy_keys += 1;
            }
            "quantize_classifier" => {
                policy.quantize_classifier = flag(value)?;
                policy_keys += 1;
            }
            "quantize_frontend" => {
                policy.quantize_frontend = flag(value)?;
                policy_keys += 1;
            }
            "quantize_pos_conv" => {
                policy.quantize_pos_conv = flag(value)?;
                policy_keys += 1;
            }
            "tied_layer_map" => {
                let mut parsed = Vec::new();
                if !value.is_empty() {
                    for part in value.split(',') {
                        parsed.push(part.parse::<usize>().map_err(|_| {
                            Error::CorruptModel(format!("bad tie map entry {part:?}"))
                        })?);
                    }
                }
                map = Some(parsed);
            }
            _ => {
                config_lines.push_str(line);
                config_lines.push('\n');
            }
        }
    }
    if policy_keys != 4 {
        return Err(Error::CorruptModel("header is missing quantization flags".into()));
    }
    let map = map.ok_or_else(|| Error::CorruptModel("header is missing tied_layer_map".into()))?;
    let config = ModelConfig::from_kv_text(&config_lines)
        .map_err(|e| Error::CorruptModel(format!("header config: {e}")))?;
    Ok((config, map, policy))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 4 {
        return Err(Error::CorruptModel("file shorter than the magic".into()));
    }
    let got: [u8; 4] = bytes[..4].try_into().unwrap();
    if got != MAGIC {
        return Err(Error::BadMagic { got });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            got: version,
            supported: FORMAT_VERSION,
        });
    }
    let header_len = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(header_len)?)
        .map_err(|_| Error::CorruptModel("header is not UTF-8".into()))?;
    let (config, map, header_policy) = parse_header(header)?;

    let count = r.u32()? as usize;
    // An entry is at least 20 bytes; this bounds allocation by the input.
    if count > bytes.len() / 20 {
        return Err(Error::CorruptModel(format!(
            "directory claims {count} entries in a {}-byte file",
            bytes.len()
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptModel("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.take(1)?[0];
        if dtype > 1 {
            return Err(Error::CorruptModel(format!(
                "tensor {name:?} has unknown dtype {dtype}"
            )));
        }
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let offset = r.u64()?;
        let length = r.u64()?;
        entries.push(DirEntry {
            name,
            quantized: dtype == 1,
            shape,
            offset,
            length,
        });
    }

    let payload = &bytes[r.pos..];
    let mut running = 0u64;
    let mut tensors = BTreeMap::new();
    for e in entries {
        if e.offset != running {
            return Err(Error::CorruptModel(format!(
                "tensor {:?} at offset {}, expected {} (entries must pack back to back)",
                e.name, e.offset, running
            )));
        }
        let numel = e
            .shape
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(*d as u64))
            .ok_or_else(|| Error::CorruptModel(format!("tensor {:?} shape overflows", e.name)))?;
        let want_len = if e.quantized {
            let channels = *e.shape.first().unwrap_or(&0) as u64;
            4 * channels + numel
        } else {
            4 * numel
        };
        if e.length != want_len {
            return Err(Error::CorruptModel(format!(
                "tensor {:?}: payload length {} does not match shape {:?}",
                e.name, e.length, e.shape
            )));
        }
        let end = e
            .offset
            .checked_add(e.length)
            .filter(|end| *end <= payload.len() as u64)
            .ok_or_else(|| Error::CorruptModel(format!("tensor {:?} overruns payload", e.name)))?;
        running = end;
        let raw = &payload[e.offset as usize..end as usize];
        let stored = if e.quantized {
            let channels = *e.shape.first().unwrap_or(&0);
            let (scale_bytes, value_bytes) = raw.split_at(4 * channels);
            let scales = decode_f32s(scale_bytes);
            for s in &scales {
                if !s.is_finite() || *s <= 0.0 {
                    return Err(Error::CorruptModel(format!(
                        "tensor {:?} has a non-positive scale",
                        e.name
                    )));
                }
            }
            let values: Vec<i8> = value_bytes.iter().map(|b| *b as i8).collect();
            let q = QuantizedTensor::new(e.shape, scales, values)
                .map_err(|err| Error::CorruptModel(format!("tensor {:?}: {err}", e.name)))?;
            Stored::I8(q)
        } else {
            let data = decode_f32s(raw);
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptModel(format!(
                    "tensor {:?} holds non-finite values",
                    e.name
                )));
            }
            let t = Tensor::new(e.shape, data)
                .map_err(|err| Error::CorruptModel(format!("tensor {:?}: {err}", e.name)))?;
            Stored::F32(t)
        };
        if tensors.insert(e.name.clone(), stored).is_some() {
            return Err(Error::CorruptModel(format!("duplicate tensor {:?}", e.name)));
        }
    }
    if running != payload.len() as u64 {
        return Err(Error::CorruptModel(format!(
            "{} payload bytes, directory accounts for {running}",
            payload.len()
        )));
    }

    let model = Model::from_parts(config, map, tensors);
    model.structural_validate()?;
    if derived_policy(&model) != header_policy {
        return Err(Error::CorruptModel(
            "header quantization flags disagree with tensor storage".into(),
        ));
    }
    Ok(model)
}

fn decode_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn save_model(m: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(m))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;
    use crate::quant::quantize_model;

    fn small() -> Model {
        let c = ModelConfig::from_kv_text(
            "preset=nano_ws\nnum_layers=3\nhidden=96\nheads=2\nconv_channels=16\nclip_seconds=0.5\n",
        )
        .unwrap();
        build_model(&c, 42).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let m = small();
        let bytes = model_to_bytes(&m);
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_bytes(&back), bytes);
    }

    #[test]
    fn quantized_round_trip_is_byte_identical() {
        let q = quantize_model(&small(), QuantPolicy::default()).unwrap();
        let bytes = model_to_bytes(&q);
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back, q);
        assert_eq!(model_to_bytes(&back), bytes);
        assert_eq!(derived_policy(&back), QuantPolicy::default());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wsi");
        let m = small();
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    #[test]
    fn wrong_magic_is_reported_as_such() {
        let mut bytes = model_to_bytes(&small());
        bytes[..4].copy_from_slice(b"NOPE");
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::BadMagic { got }) if &got == b"NOPE"
        ));
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = model_to_bytes(&small());
        bytes[4..6].copy_from_slice(&9u16.to_le_bytes());
        assert!(matches!(
            model_from_bytes(&bytes),
            Err(Error::VersionMismatch { got: 9, supported: 1 })
        ));
    }

    #[test]
    fn truncation_anywhere_is_an_error_not_a_panic() {
        let bytes = model_to_bytes(&small());
        let step = (bytes.len() / 97).max(1);
        for cut in (0..bytes.len()).step_by(step) {
            assert!(model_from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn flipped_storage_flag_is_caught() {
        let bytes = model_to_bytes(&small());
        let needle = b"quantize_transformer=false".as_slice();
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .expect("float model header says transformer is not quantized");
        let mut evil = bytes;
        // Same length: the extra newline replaces the final 'e', so only the
        // flag's meaning changes, and it now disagrees with the storage.
        evil[at..at + needle.len()].copy_from_slice(b"quantize_transformer=true\n");
        let err = model_from_bytes(&evil).unwrap_err();
        assert!(matches!(err, Error::CorruptModel(_)), "{err}");
    }

    #[test]
    fn tie_map_survives_the_trip() {
        let m = small();
        assert_eq!(m.tied_layer_map(), &[0, 0, 0]);
        let back = model_from_bytes(&model_to_bytes(&m)).unwrap();
        assert_eq!(back.tied_layer_map(), &[0, 0, 0]);
        assert_eq!(back.num_sets(), 1);
    }

    #[test]
    fn garbage_never_panics() {
        let mut rng = crate::rng::SplitMix64::new(7);
        for _ in 0..200 {
            let len = (rng.next_u64() % 512) as usize;
            let bytes: Vec<u8> = (0..len).map(|_| (rng.next_u64() & 0xff) as u8).collect();
            let _ = model_from_bytes(&bytes);
        }
    }
}
