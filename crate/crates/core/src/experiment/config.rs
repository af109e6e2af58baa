//! TOML experiment files.
//!
//! ```toml
//! [data]
//! csv = "data/eth_daily.csv"
//! name = "Kaggle"
//! schema = "kaggle"          # or "canonical"
//! target = "open"
//!
//! [model]
//! kind = "gpt2"              # gpt2 | llama | ann | mlp | lstm | patchtst
//! preset = "gpt2_default"
//! freeze = "fpt"
//!
//! [train]
//! base_lr = 1e-5
//! batch_size = 32
//! ```
//!
//! Recognized hyperparameter keys: `model.n_layers`, `model.hidden`, `model.n_heads`,
//! `model.max_positions`, `model.ffn_dim`, `model.vocab_size` (recorded only,
//! there is no text path), `train.base_lr`, `train.batch_size`,
//! `train.max_epochs`, `train.optimizer`, `model.patch_len`, `model.stride`,
//! `model.activation`, `train.patience`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{BackboneConfig, FfnActivation, FreezeMode, Variant};
use crate::baselines::{BaselineConfig, BaselineKind};
use crate::error::{Error, Result};
use crate::ingest::{ColumnSchema, FieldRole, GapPolicy, SplitSpec};
use crate::train::{Protocol, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gpt2,
    Llama,
    Ann,
    Mlp,
    Lstm,
    Patchtst,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpt2" => Ok(Self::Gpt2),
            "llama" => Ok(Self::Llama),
            "ann" => Ok(Self::Ann),
            "mlp" => Ok(Self::Mlp),
            "lstm" => Ok(Self::Lstm),
            "patchtst" => Ok(Self::Patchtst),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gpt2 => "gpt2",
            Self::Llama => "llama",
            Self::Ann => "ann",
            Self::Mlp => "mlp",
            Self::Lstm => "lstm",
            Self::Patchtst => "patchtst",
        })
    }
}

impl ModelKind {
    pub fn is_backbone(self) -> bool {
        matches!(self, Self::Gpt2 | Self::Llama)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaKind {
    #[default]
    Kaggle,
    Canonical,
}

impl SchemaKind {
    pub fn columns(self) -> ColumnSchema {
        match self {
            Self::Kaggle => ColumnSchema::kaggle(),
            Self::Canonical => ColumnSchema::canonical(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    /// Dataset label shown in comparison tables.
    pub name: String,
    pub schema: SchemaKind,
    pub target: FieldRole,
    pub gap_policy: GapPolicy,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub seq_len: usize,
    pub pred_len: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            csv: None,
            name: "Kaggle".into(),
            schema: SchemaKind::Kaggle,
            target: FieldRole::Open,
            gap_policy: GapPolicy::ForwardFill,
            train_ratio: 0.7,
            val_ratio: 0.1,
            test_ratio: 0.2,
            seq_len: 7,
            pred_len: 1,
        }
    }
}

impl DataSection {
    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.train_ratio, self.val_ratio, self.test_ratio)
    }
}

/// Every field except `kind` is optional; unset fields come from `preset`
/// (backbones) or the kind's defaults (baselines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub preset: Option<String>,
    pub label: Option<String>,
    #[serde(default)]
    pub freeze: FreezeMode,
    /// Pretrained archive (native names or the public GPT-2 layout).
    pub weights: Option<PathBuf>,
    pub n_layers: Option<usize>,
    pub hidden: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_kv_groups: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub max_positions: Option<usize>,
    pub vocab_size: Option<usize>,
    pub patch_len: Option<usize>,
    pub stride: Option<usize>,
    pub activation: Option<String>,
    pub rope_base: Option<f64>,
    pub causal: Option<bool>,
    pub hidden_sizes: Option<Vec<usize>>,
    pub dropout: Option<f64>,
    pub units: Option<usize>,
}

impl ModelSection {
    pub fn of_kind(kind: ModelKind) -> Self {
        Self {
            kind,
            preset: None,
            label: None,
            freeze: FreezeMode::Fpt,
            weights: None,
            n_layers: None,
            hidden: None,
            n_heads: None,
            n_kv_groups: None,
            ffn_dim: None,
            max_positions: None,
            vocab_size: None,
            patch_len: None,
            stride: None,
            activation: None,
            rope_base: None,
            causal: None,
            hidden_sizes: None,
            dropout: None,
            units: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub base_lr: Option<f64>,
    /// Defaults to `base_lr / 100`.
    pub min_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub accum_steps: Option<usize>,
    pub loss_scale: Option<f64>,
    pub seed: Option<u64>,
    pub protocol: Option<Protocol>,
    pub few_shot_fraction: Option<f64>,
    /// Only `"adam"` is accepted.
    pub optimizer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

/// The model to build, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Backbone {
        config: BackboneConfig,
        freeze: FreezeMode,
        weights: Option<PathBuf>,
    },
    Baseline(BaselineConfig),
}

/// A config with every default filled in; this is what gets hashed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub data: DataSection,
    pub kind: ModelKind,
    pub label: String,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

fn backbone_preset(name: &str) -> Result<BackboneConfig> {
    Ok(match name {
        "gpt2_default" => BackboneConfig::gpt2_default(),
        "gpt2_checkpoint" => BackboneConfig::gpt2_checkpoint(),
        "llama2_70b" => BackboneConfig::llama2_70b(),
        "llama3_70b" => BackboneConfig::llama3_70b(),
        "llama_desk" => BackboneConfig::llama_desk(),
        "gpt2_toy" => BackboneConfig::toy(Variant::Gpt2),
        "llama_toy" => BackboneConfig::toy(Variant::Llama),
        other => return Err(Error::Config(format!("unknown model preset `{other}`"))),
    })
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        d.split_spec()?;
        if let Some(opt) = &t.optimizer {
            if !opt.eq_ignore_ascii_case("adam") {
                return Err(Error::Config(format!("unsupported optimizer `{opt}`")));
            }
        }
        let seed = t.seed.unwrap_or(0);

        let (model, label, lr_default, batch_default) = if m.kind.is_backbone() {
            let preset = m.preset.as_deref().unwrap_or(match m.kind {
                ModelKind::Gpt2 => "gpt2_default",
                _ => "llama_desk",
            });
            let mut c = backbone_preset(preset)?;
            let want = if m.kind == ModelKind::Gpt2 {
                Variant::Gpt2
            } else {
                Variant::Llama
            };
            if c.variant != want {
                return Err(Error::Config(format!(
                    "preset `{preset}` is a {} backbone, kind is {}",
                    c.variant, m.kind
                )));
            }
            c.n_layers = m.n_layers.unwrap_or(c.n_layers);
            c.hidden = m.hidden.unwrap_or(c.hidden);
            c.n_heads = m.n_heads.unwrap_or(c.n_heads);
            c.n_kv_groups = m.n_kv_groups.unwrap_or(if want == Variant::Gpt2 {
                c.n_heads
            } else {
                c.n_kv_groups
            });
            c.ffn_dim = m.ffn_dim.unwrap_or(c.ffn_dim);
            c.max_positions = m.max_positions.unwrap_or(c.max_positions);
            c.patch_len = m.patch_len.unwrap_or(c.patch_len);
            c.stride = m.stride.unwrap_or(c.stride);
            c.rope_base = m.rope_base.unwrap_or(c.rope_base);
            c.causal = m.causal.unwrap_or(c.causal);
            if let Some(a) = &m.activation {
                c.activation = a.parse::<FfnActivation>()?;
            }
            c.seq_len = d.seq_len;
            c.pred_len = d.pred_len;
            c.validate()?;
            let label = match (want, preset) {
                (Variant::Gpt2, _) => "GPT-2",
                (Variant::Llama, "llama3_70b") => "Llama-3",
                (Variant::Llama, "llama2_70b") => "Llama-2",
                (Variant::Llama, _) => "Llama",
            };
            let spec = ModelSpec::Backbone {
                config: c,
                freeze: m.freeze,
                weights: m.weights.clone(),
            };
            match want {
                Variant::Gpt2 => (spec, label, 1e-5, 32),
                Variant::Llama => (spec, label, 1e-4, 16),
            }
        } else {
            let kind: BaselineKind = m.kind.to_string().parse()?;
            let mut b = BaselineConfig::for_kind(kind);
            b.seq_len = d.seq_len;
            b.pred_len = d.pred_len;
            b.seed = seed;
            b.hidden_sizes = m.hidden_sizes.clone().unwrap_or(b.hidden_sizes);
            b.dropout = m.dropout.unwrap_or(b.dropout);
            b.units = m.units.unwrap_or(b.units);
            b.patch_len = m.patch_len.unwrap_or(b.patch_len);
            b.stride = m.stride.unwrap_or(b.stride);
            b.n_layers = m.n_layers.unwrap_or(b.n_layers);
            b.d_model = m.hidden.unwrap_or(b.d_model);
            b.n_heads = m.n_heads.unwrap_or(b.n_heads);
            b.ffn_dim = m.ffn_dim.unwrap_or(b.ffn_dim);
            b.validate()?;
            let label = match kind {
                BaselineKind::Ann => "ANN",
                BaselineKind::Mlp => "MLP",
                BaselineKind::Lstm => "LSTM",
                BaselineKind::Patchtst => "PatchTST",
            };
            (ModelSpec::Baseline(b), label, 1e-3, 32)
        };

        let base_lr = t.base_lr.unwrap_or(lr_default);
        let train = TrainConfig {
            base_lr,
            min_lr: t.min_lr.unwrap_or(base_lr / 100.0),
            batch_size: t.batch_size.unwrap_or(batch_default),
            max_epochs: t.max_epochs.unwrap_or(20),
            patience: t.patience.unwrap_or(5),
            accum_steps: t.accum_steps.unwrap_or(1),
            loss_scale: t.loss_scale.unwrap_or(1.0),
            seed,
            protocol: t.protocol.unwrap_or_default(),
            few_shot_fraction: t.few_shot_fraction.unwrap_or(0.1),
        };
        train.validate()?;
        Ok(ResolvedConfig {
            data: d.clone(),
            kind: m.kind,
            label: m.label.clone().unwrap_or_else(|| label.to_string()),
            model,
            train,
        })
    }
}

impl ResolvedConfig {
    /// SHA-256 over the canonical JSON form, with the seed and dataset path
    /// left out (they enter the run id separately).
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("plain data serializes");
        if let Some(obj) = value.as_object_mut() {
            if let Some(train) = obj.get_mut("train").and_then(|t| t.as_object_mut()) {
                train.remove("seed");
            }
            if let Some(data) = obj.get_mut("data").and_then(|t| t.as_object_mut()) {
                data.remove("csv");
            }
            if let Some(b) = obj
                .get_mut("model")
                .and_then(|m| m.get_mut("baseline"))
                .and_then(|b| b.as_object_mut())
            {
                b.remove("seed");
            }
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        if let ModelSpec::Baseline(b) = &mut self.model {
            b.seed = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GPT2: &str = r#"
[data]
name = "Kaggle"

[model]
kind = "gpt2"
preset = "gpt2_default"

[train]
base_lr = 1e-5
batch_size = 32
max_epochs = 20
patience = 5
"#;

    #[test]
    fn table_settings_resolve() {
        let r = ExperimentConfig::from_toml(GPT2)
            .unwrap()
            .resolve()
            .unwrap();
        let ModelSpec::Backbone { config, freeze, .. } = &r.model else {
            panic!("backbone expected")
        };
        assert_eq!(
            (config.n_layers, config.hidden, config.n_heads),
            (12, 768, 12)
        );
        assert_eq!(
            (config.patch_len, config.stride, config.max_positions),
            (16, 8, 1024)
        );
        assert_eq!(*freeze, FreezeMode::Fpt);
        assert!((r.train.min_lr - 1e-7).abs() < 1e-20);
        assert_eq!(r.label, "GPT-2");
    }

    #[test]
    fn misspelled_key_is_named() {
        let text = GPT2.replace("patience = 5", "patiense = 5");
        match ExperimentConfig::from_toml(&text) {
            Err(Error::Config(m)) => assert!(m.contains("patiense"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_ignores_seed_but_not_settings() {
        let c = ExperimentConfig::from_toml(GPT2).unwrap();
        let mut a = c.resolve().unwrap();
        let h = a.hash();
        a.set_seed(7);
        assert_eq!(a.hash(), h);
        let mut c2 = c.clone();
        c2.train.base_lr = Some(2e-5);
        assert_ne!(c2.resolve().unwrap().hash(), h);
        let round = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(round.resolve().unwrap().hash(), h);
    }

    #[test]
    fn baseline_and_preset_errors() {
        let text = "[model]\nkind = \"lstm\"\n";
        let r = ExperimentConfig::from_toml(text)
            .unwrap()
            .resolve()
            .unwrap();
        assert!(matches!(r.model, ModelSpec::Baseline(ref b) if b.units == 50));
        let bad = "[model]\nkind = \"gpt2\"\npreset = \"llama_desk\"\n";
        assert!(ExperimentConfig::from_toml(bad).unwrap().resolve().is_err());
        assert!(ExperimentConfig::from_toml("[model]\nkind = \"cnn\"\n").is_err());
    }
}
