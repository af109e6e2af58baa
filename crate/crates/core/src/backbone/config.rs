use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normpatch::PatchGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// LayerNorm with bias, learned absolute positions, biased projections.
    Gpt2,
    /// RMSNorm, rotary positions, grouped key/value heads, no biases.
    Llama,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpt2" => Ok(Self::Gpt2),
            "llama" => Ok(Self::Llama),
            other => Err(Error::Config(format!("unknown backbone variant `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gpt2 => "gpt2",
            Self::Llama => "llama",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnActivation {
    /// `out(gelu(in(x)))`
    Gelu,
    /// `down(silu(gate(x)) * up(x))`
    Swiglu,
}

impl FromStr for FfnActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Self::Gelu),
            // Llama-3's "SwiGLU++" is treated as plain SwiGLU.
            "swiglu" | "swiglu++" => Ok(Self::Swiglu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture hyperparameters for a forecasting backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: Variant,
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    /// Key/value heads. Must equal `n_heads` for GPT-2.
    pub n_kv_groups: usize,
    pub ffn_dim: usize,
    /// Rows of the learned position table (GPT-2 only).
    pub max_positions: usize,
    pub seq_len: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub pred_len: usize,
    pub activation: FfnActivation,
    /// Rotary base (Llama only).
    pub rope_base: f64,
    /// LayerNorm / RMSNorm epsilon.
    pub norm_eps: f64,
    /// Causal attention over patches. Encoder-style models turn this off.
    pub causal: bool,
}

impl BackboneConfig {
    /// GPT-2 small geometry with a 7-day input and next-day target.
    /// The FFN width is 768; the public checkpoint uses 3072,
    /// see [`BackboneConfig::gpt2_checkpoint`].
    pub fn gpt2_default() -> Self {
        Self {
            variant: Variant::Gpt2,
            n_layers: 12,
            hidden: 768,
            n_heads: 12,
            n_kv_groups: 12,
            ffn_dim: 768,
            max_positions: 1024,
            seq_len: 7,
            patch_len: 16,
            stride: 8,
            pred_len: 1,
            activation: FfnActivation::Gelu,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
            causal: true,
        }
    }

    /// The public 12-layer GPT-2 checkpoint geometry (FFN 3072).
    pub fn gpt2_checkpoint() -> Self {
        Self {
            ffn_dim: 3072,
            ..Self::gpt2_default()
        }
    }

    /// Llama-2 70B geometry. Buildable in principle, far beyond desk scale.
    pub fn llama2_70b() -> Self {
        Self {
            variant: Variant::Llama,
            n_layers: 80,
            hidden: 8192,
            n_heads: 64,
            n_kv_groups: 8,
            ffn_dim: 28672,
            max_positions: 4096,
            seq_len: 7,
            patch_len: 16,
            stride: 8,
            pred_len: 1,
            activation: FfnActivation::Swiglu,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
            causal: true,
        }
    }

    /// Llama-3 70B geometry.
    pub fn llama3_70b() -> Self {
        Self {
            max_positions: 8192,
            rope_base: 500_000.0,
            ..Self::llama2_70b()
        }
    }

    /// Reduced Llama block stack used for desk-scale runs.
    pub fn llama_desk() -> Self {
        Self {
            n_layers: 4,
            hidden: 256,
            n_heads: 8,
            n_kv_groups: 2,
            ffn_dim: 688,
            ..Self::llama2_70b()
        }
    }

    /// Two-layer, 16-wide model for smoke tests.
    pub fn toy(variant: Variant) -> Self {
        let base = match variant {
            Variant::Gpt2 => Self::gpt2_default(),
            Variant::Llama => Self::llama2_70b(),
        };
        Self {
            n_layers: 2,
            hidden: 16,
            n_heads: 2,
            n_kv_groups: match variant {
                Variant::Gpt2 => 2,
                Variant::Llama => 1,
            },
            ffn_dim: 32,
            max_positions: 64,
            ..base
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_groups * self.head_dim()
    }

    pub fn patch_geometry(&self) -> Result<PatchGeometry> {
        PatchGeometry::new(self.seq_len, self.patch_len, self.stride)
    }

    pub fn n_patches(&self) -> Result<usize> {
        Ok(self.patch_geometry()?.n_patches())
    }

    /// Input width of the output head.
    pub fn head_input_dim(&self) -> Result<usize> {
        Ok(self.n_patches()? * self.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_layers < 1 {
            return err("n_layers must be at least 1".into());
        }
        if self.n_heads == 0 || self.hidden == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return err(format!(
                "hidden ({}) must be divisible by n_heads ({})",
                self.hidden, self.n_heads
            ));
        }
        if self.n_kv_groups == 0 || !self.n_heads.is_multiple_of(self.n_kv_groups) {
            return err(format!(
                "n_heads ({}) must be divisible by n_kv_groups ({})",
                self.n_heads, self.n_kv_groups
            ));
        }
        if self.variant == Variant::Gpt2 && self.n_kv_groups != self.n_heads {
            return err(
                "gpt2 uses one key/value head per query head (n_kv_groups = n_heads)".into(),
            );
        }
        if self.variant == Variant::Llama && !self.head_dim().is_multiple_of(2) {
            return err(format!(
                "rotary needs an even head_dim, got {}",
                self.head_dim()
            ));
        }
        if self.ffn_dim == 0 || self.pred_len == 0 {
            return err("ffn_dim and pred_len must be positive".into());
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 {
            return err("norm_eps must be positive".into());
        }
        if self.variant == Variant::Llama && (self.rope_base.is_nan() || self.rope_base <= 0.0) {
            return err("rope_base must be positive".into());
        }
        let n_patches = self.n_patches()?;
        if self.variant == Variant::Gpt2 && n_patches > self.max_positions {
            return err(format!(
                "{n_patches} patches exceed max_positions ({})",
                self.max_positions
            ));
        }
        Ok(())
    }
}
