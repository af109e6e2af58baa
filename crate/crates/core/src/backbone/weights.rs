//! Pretrained-weight loading and conversion from the public GPT-2 layout.

use std::collections::BTreeSet;

use log::warn;
use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::backbone::config::BackboneConfig;
use crate::backbone::model::ForecastModel;
use crate::error::{Error, Result};
use crate::params::WeightArchive;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Model parameters copied from the archive.
    pub loaded: Vec<String>,
    /// Model parameters the archive does not provide (left at init).
    pub missing: Vec<String>,
    /// Archive entries the model has no slot for.
    pub unused: Vec<String>,
    /// `(archive_depth, model_depth)` when only the leading blocks were taken.
    pub truncated: Option<(usize, usize)>,
}

fn block_index(name: &str) -> Option<usize> {
    name.strip_prefix("blocks.")?
        .split('.')
        .next()?
        .parse()
        .ok()
}

/// Copies every archive array whose name and shape match a model parameter.
/// A name match with a different shape is an error and nothing is copied.
pub fn load_pretrained_weights(
    model: &mut ForecastModel,
    archive: &WeightArchive,
) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for (name, param) in model.params.iter() {
        match archive.get(name) {
            Some(a) if a.dim() != param.value.dim() => {
                return Err(Error::WeightShape {
                    name: name.to_string(),
                    model: vec![param.value.nrows(), param.value.ncols()],
                    archive: vec![a.nrows(), a.ncols()],
                })
            }
            Some(_) => report.loaded.push(name.to_string()),
            None => report.missing.push(name.to_string()),
        }
    }
    for name in &report.loaded {
        let src = archive.get(name).expect("checked above");
        model.params.get_mut(name)?.assign(src);
    }
    report.unused = archive
        .tensors
        .keys()
        .filter(|k| !model.params.contains(k))
        .cloned()
        .collect();
    let archive_depth = archive
        .tensors
        .keys()
        .filter_map(|k| block_index(k))
        .max()
        .map_or(0, |d| d + 1);
    if archive_depth > model.config.n_layers {
        report.truncated = Some((archive_depth, model.config.n_layers));
    }
    Ok(report)
}

/// Converts a GPT-2 checkpoint in the public layout (`h.{i}.attn.c_attn`,
/// `wpe`, `ln_f`, ... with an optional `transformer.` prefix) to this crate's
/// names. The fused `c_attn` projection is split into `q`, `k`, `v`. `wte`
/// is carried over unchanged; forecasting never reads it.
pub fn convert_gpt2_checkpoint(hf: &WeightArchive) -> Result<WeightArchive> {
    let mut out = WeightArchive::new();
    for (raw, value) in &hf.tensors {
        let name = raw.strip_prefix("transformer.").unwrap_or(raw);
        if name.ends_with(".attn.bias") || name.ends_with(".attn.masked_bias") {
            // causal-mask buffers, not parameters
            continue;
        }
        let mapped = match name {
            "wte.weight" => Some("wte.weight".to_string()),
            "wpe.weight" => Some("pos.weight".to_string()),
            "ln_f.weight" => Some("final_norm.gain".to_string()),
            "ln_f.bias" => Some("final_norm.bias".to_string()),
            _ => None,
        };
        if let Some(m) = mapped {
            out.insert(m, value.clone());
            continue;
        }
        let Some(rest) = name.strip_prefix("h.") else {
            warn!("skipping unrecognised checkpoint entry `{raw}`");
            continue;
        };
        let (idx, field) = rest
            .split_once('.')
            .ok_or_else(|| Error::Archive(format!("malformed block entry `{raw}`")))?;
        let b = format!("blocks.{idx}");
        let kind = |s: &str| if s == "weight" { "gain" } else { "bias" };
        match field.rsplit_once('.') {
            Some(("ln_1", t)) => out.insert(format!("{b}.ln_1.{}", kind(t)), value.clone()),
            Some(("ln_2", t)) => out.insert(format!("{b}.ln_2.{}", kind(t)), value.clone()),
            Some(("attn.c_attn", t)) => {
                let width = value.ncols();
                if width % 3 != 0 {
                    return Err(Error::Archive(format!(
                        "`{raw}` width {width} not divisible by 3"
                    )));
                }
                let w = width / 3;
                for (i, part) in ["q", "k", "v"].iter().enumerate() {
                    let slab: Array2<f64> = value.slice(s![.., i * w..(i + 1) * w]).to_owned();
                    out.insert(format!("{b}.attn.{part}.{t}"), slab);
                }
            }
            Some(("attn.c_proj", t)) => out.insert(format!("{b}.attn.proj.{t}"), value.clone()),
            Some(("mlp.c_fc", t)) => out.insert(format!("{b}.mlp.fc_in.{t}"), value.clone()),
            Some(("mlp.c_proj", t)) => out.insert(format!("{b}.mlp.fc_out.{t}"), value.clone()),
            _ => warn!("skipping unrecognised checkpoint entry `{raw}`"),
        }
    }
    Ok(out)
}

/// Adopts the archive's FFN width when it differs from the configured one
/// (e.g. 3072 in the public GPT-2 checkpoint vs 768 in `gpt2_default`).
pub fn reconcile_with_archive(config: &BackboneConfig, archive: &WeightArchive) -> BackboneConfig {
    let mut c = config.clone();
    let key = match c.activation {
        crate::backbone::config::FfnActivation::Gelu => "blocks.0.mlp.fc_in.weight",
        crate::backbone::config::FfnActivation::Swiglu => "blocks.0.mlp.gate.weight",
    };
    if let Some(w) = archive.get(key) {
        if w.ncols() != c.ffn_dim {
            warn!(
                "ffn_dim {} overridden by checkpoint width {}",
                c.ffn_dim,
                w.ncols()
            );
            c.ffn_dim = w.ncols();
        }
    }
    c
}

/// Names of the model parameters that have an archive counterpart.
pub fn loaded_set(report: &LoadReport) -> BTreeSet<&str> {
    report.loaded.iter().map(String::as_str).collect()
}
