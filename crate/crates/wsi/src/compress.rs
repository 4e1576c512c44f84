//! Structural compression: drop the positional conv, keep a subset of
//! transformer layers, share weights across layer groups.
//!
//! Every operation takes a model by reference and returns a new one; the
//! canonical order when stacking steps is prune, select, tie, quantize.
//! Selection and tying both resolve reads through the input model's tie map,
//! so they compose with already-tied inputs.

use std::collections::BTreeMap;

use crate::model::{Model, Stored};
use crate::{Error, Result};

fn is_layer_tensor(name: &str) -> bool {
    name.starts_with("enc.")
}

/// Split `enc.{set}.{part}` into the set index and the part suffix.
fn split_layer_name(name: &str) -> (usize, &str) {
    let rest = &name["enc.".len()..];
    let dot = rest.find('.').expect("layer tensor names contain a part suffix");
    let set: usize = rest[..dot].parse().expect("layer tensor names carry a set index");
    (set, &rest[dot + 1..])
}

/// Delete the positional convolution. The returned flag says whether there
/// was one to remove; callers surface a warning on `false` instead of
/// failing, so pipelines stay idempotent.
pub fn remove_positional_conv(m: &Model) -> (Model, bool) {
    if !m.config().has_positional_conv {
        return (m.clone(), false);
    }
    let mut config = m.config().clone();
    config.has_positional_conv = false;
    let tensors: BTreeMap<String, Stored> = m
        .tensors()
        .filter(|(name, _)| !name.starts_with("posconv."))
        .map(|(name, stored)| (name.to_string(), stored.clone()))
        .collect();
    let out = Model::from_parts(config, m.tied_layer_map().to_vec(), tensors);
    debug_assert!(out.structural_validate().is_ok());
    (out, true)
}

/// Keep only the listed layers, in the order given. The result is untied
/// (each kept layer owns its weights, copied from whatever set backed it)
/// and its layer-sum logits are re-initialized to zeros, since the old
/// mixture weights index a different set of outputs.
pub fn select_layers(m: &Model, keep: &[usize]) -> Result<Model> {
    let total = m.config().num_layers;
    let mut seen = vec![false; total];
    for &l in keep {
        if l >= total {
            return Err(Error::InvalidSelection(format!(
                "layer {l} out of range for a {total}-layer model"
            )));
        }
        if seen[l] {
            return Err(Error::InvalidSelection(format!("layer {l} listed twice")));
        }
        seen[l] = true;
    }

    let mut config = m.config().clone();
    config.num_layers = keep.len();
    config.weight_share_group = 1;

    let mut tensors: BTreeMap<String, Stored> = m
        .tensors()
        .filter(|(name, _)| !is_layer_tensor(name))
        .map(|(name, stored)| (name.to_string(), stored.clone()))
        .collect();
    for (new_idx, &old_layer) in keep.iter().enumerate() {
        let src_set = m.layer_set(old_layer);
        for (name, stored) in m.tensors() {
            if !is_layer_tensor(name) {
                continue;
            }
            let (set, part) = split_layer_name(name);
            if set == src_set {
                tensors.insert(format!("enc.{new_idx}.{part}"), stored.clone());
            }
        }
    }
    tensors.insert(
        "head.layer_logits".to_string(),
        Stored::F32(crate::tensor::Tensor::zeros(vec![keep.len() + 1])),
    );

    let out = Model::from_parts(config, (0..keep.len()).collect(), tensors);
    out.structural_validate()?;
    Ok(out)
}

/// Share weights in groups of `group` consecutive layers. Set `k` keeps the
/// weights of layer `k * group`; the other layers in the group point at it.
pub fn tie_weights(m: &Model, group: usize) -> Result<Model> {
    if group == 0 {
        return Err(Error::InvalidConfig("tie group must be >= 1".into()));
    }
    let layers = m.config().num_layers;
    let mut config = m.config().clone();
    config.weight_share_group = group;
    let map: Vec<usize> = (0..layers).map(|l| l / group).collect();
    let sets = layers.div_ceil(group);

    let mut tensors: BTreeMap<String, Stored> = m
        .tensors()
        .filter(|(name, _)| !is_layer_tensor(name))
        .map(|(name, stored)| (name.to_string(), stored.clone()))
        .collect();
    for new_set in 0..sets {
        let src_set = m.layer_set(new_set * group);
        for (name, stored) in m.tensors() {
            if !is_layer_tensor(name) {
                continue;
            }
            let (set, part) = split_layer_name(name);
            if set == src_set {
                tensors.insert(format!("enc.{new_set}.{part}"), stored.clone());
            }
        }
    }

    let out = Model::from_parts(config, map, tensors);
    out.structural_validate()?;
    Ok(out)
}

/// Expand a tied model into an untied one with identical forward behavior:
/// every layer gets its own copy of the set that backed it.
pub fn materialize_ties(m: &Model) -> Model {
    let layers = m.config().num_layers;
    let mut config = m.config().clone();
    config.weight_share_group = 1;

    let mut tensors: BTreeMap<String, Stored> = m
        .tensors()
        .filter(|(name, _)| !is_layer_tensor(name))
        .map(|(name, stored)| (name.to_string(), stored.clone()))
        .collect();
    for layer in 0..layers {
        let src_set = m.layer_set(layer);
        for (name, stored) in m.tensors() {
            if !is_layer_tensor(name) {
                continue;
            }
            let (set, part) = split_layer_name(name);
            if set == src_set {
                tensors.insert(format!("enc.{layer}.{part}"), stored.clone());
            }
        }
    }

    let out = Model::from_parts(config, (0..layers).collect(), tensors);
    debug_assert!(out.structural_validate().is_ok());
    out
}
