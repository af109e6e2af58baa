//! Patch-token transformer forecaster.
//!
//! Parameter names (all arrays are `in × out` or `1 × n`):
//!
//! ```text
//! embed.weight            patch_len × hidden     input projection
//! embed.bias              1 × hidden
//! pos.weight              max_positions × hidden (gpt2)
//! rotary.inv_freq         1 × head_dim/2         (llama)
//! blocks.{i}.ln_1.gain / .bias                   (gpt2; llama: rms_1.gain)
//! blocks.{i}.attn.{q,k,v,proj}.weight / .bias    (biases gpt2 only)
//! blocks.{i}.ln_2.gain / .bias                   (gpt2; llama: rms_2.gain)
//! blocks.{i}.mlp.fc_in / fc_out .weight / .bias  (gelu)
//! blocks.{i}.mlp.gate / up / down .weight        (swiglu)
//! final_norm.gain / .bias                        (bias gpt2 only)
//! head.weight             (n_patches·hidden) × pred_len
//! head.bias               1 × pred_len
//! ```

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Activation, AttentionSpec, Graph, NodeId};
use crate::backbone::config::{BackboneConfig, FfnActivation, Variant};
use crate::backbone::layers::RotaryTable;
use crate::error::{Error, Result};
use crate::model::{check_batch, Forecaster, Phase};
use crate::normpatch::{PatchGeometry, RevinState};
use crate::params::ParameterStore;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub config: BackboneConfig,
    pub params: ParameterStore,
    label: String,
    geometry: PatchGeometry,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Array2<f64> {
        let dist = Normal::new(0.0, std).expect("positive std");
        Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut self.rng))
    }
}

/// Builds a backbone with every parameter trainable; apply a
/// [`FreezeMode`](crate::backbone::FreezeMode) afterwards.
pub fn build_backbone(config: &BackboneConfig, seed: u64) -> Result<ForecastModel> {
    config.validate()?;
    let c = config;
    let geometry = c.patch_geometry()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let mut p = ParameterStore::new();
    let h = c.hidden;
    let gpt2 = c.variant == Variant::Gpt2;
    let resid_std = INIT_STD / (2.0 * c.n_layers as f64).sqrt();

    p.insert(
        "embed.weight",
        init.normal(c.patch_len, h, 1.0 / (c.patch_len as f64).sqrt()),
        true,
    );
    p.insert("embed.bias", Array2::zeros((1, h)), true);
    match c.variant {
        Variant::Gpt2 => p.insert(
            "pos.weight",
            init.normal(c.max_positions, h, INIT_STD),
            true,
        ),
        Variant::Llama => {
            let table = RotaryTable::new(c.head_dim(), c.rope_base)?;
            p.insert(
                "rotary.inv_freq",
                Array2::from_shape_vec((1, table.inv_freq.len()), table.inv_freq)
                    .expect("row vector"),
                true,
            );
        }
    }

    for i in 0..c.n_layers {
        let b = format!("blocks.{i}");
        let norm = |p: &mut ParameterStore, which: &str| {
            if gpt2 {
                p.insert(format!("{b}.ln_{which}.gain"), Array2::ones((1, h)), true);
                p.insert(format!("{b}.ln_{which}.bias"), Array2::zeros((1, h)), true);
            } else {
                p.insert(format!("{b}.rms_{which}.gain"), Array2::ones((1, h)), true);
            }
        };
        norm(&mut p, "1");
        for (proj, width) in [("q", h), ("k", c.kv_dim()), ("v", c.kv_dim())] {
            p.insert(
                format!("{b}.attn.{proj}.weight"),
                init.normal(h, width, INIT_STD),
                true,
            );
            if gpt2 {
                p.insert(
                    format!("{b}.attn.{proj}.bias"),
                    Array2::zeros((1, width)),
                    true,
                );
            }
        }
        p.insert(
            format!("{b}.attn.proj.weight"),
            init.normal(h, h, resid_std),
            true,
        );
        if gpt2 {
            p.insert(format!("{b}.attn.proj.bias"), Array2::zeros((1, h)), true);
        }
        norm(&mut p, "2");
        match c.activation {
            FfnActivation::Gelu => {
                p.insert(
                    format!("{b}.mlp.fc_in.weight"),
                    init.normal(h, c.ffn_dim, INIT_STD),
                    true,
                );
                if gpt2 {
                    p.insert(
                        format!("{b}.mlp.fc_in.bias"),
                        Array2::zeros((1, c.ffn_dim)),
                        true,
                    );
                }
                p.insert(
                    format!("{b}.mlp.fc_out.weight"),
                    init.normal(c.ffn_dim, h, resid_std),
                    true,
                );
                if gpt2 {
                    p.insert(format!("{b}.mlp.fc_out.bias"), Array2::zeros((1, h)), true);
                }
            }
            FfnActivation::Swiglu => {
                p.insert(
                    format!("{b}.mlp.gate.weight"),
                    init.normal(h, c.ffn_dim, INIT_STD),
                    true,
                );
                p.insert(
                    format!("{b}.mlp.up.weight"),
                    init.normal(h, c.ffn_dim, INIT_STD),
                    true,
                );
                p.insert(
                    format!("{b}.mlp.down.weight"),
                    init.normal(c.ffn_dim, h, resid_std),
                    true,
                );
            }
        }
    }

    p.insert("final_norm.gain", Array2::ones((1, h)), true);
    if gpt2 {
        p.insert("final_norm.bias", Array2::zeros((1, h)), true);
    }
    let head_in = geometry.n_patches() * h;
    p.insert(
        "head.weight",
        init.normal(head_in, c.pred_len, INIT_STD),
        true,
    );
    p.insert("head.bias", Array2::zeros((1, c.pred_len)), true);

    let label = match c.variant {
        Variant::Gpt2 => "GPT-2",
        Variant::Llama => "Llama",
    };
    Ok(ForecastModel {
        config: c.clone(),
        params: p,
        label: label.to_string(),
        geometry,
    })
}

impl ForecastModel {
    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn n_patches(&self) -> usize {
        self.geometry.n_patches()
    }

    pub fn head_input_dim(&self) -> usize {
        self.n_patches() * self.config.hidden
    }

    /// RevIN-normalizes each window and lays its patches out as rows:
    /// `(B·n_patches) × patch_len`.
    pub fn tokenize(&self, batch: &Array2<f64>) -> Result<(Array2<f64>, Vec<RevinState>)> {
        check_batch(batch, self.config.seq_len)?;
        let g = self.geometry;
        let n_p = g.n_patches();
        let mut states = Vec::with_capacity(batch.nrows());
        let mut patches = Array2::zeros((batch.nrows() * n_p, g.patch_len));
        for (b, window) in batch.rows().into_iter().enumerate() {
            let values = window.to_vec();
            let state = RevinState::of(&values)?;
            let normed = state.normalize(&values);
            for p in 0..n_p {
                for o in 0..g.patch_len {
                    patches[[b * n_p + p, o]] = normed[g.source_index(p, o)];
                }
            }
            states.push(state);
        }
        Ok((patches, states))
    }

    fn norm(&self, g: &mut Graph<'_>, x: NodeId, prefix: &str) -> Result<NodeId> {
        let eps = self.config.norm_eps;
        match self.config.variant {
            Variant::Gpt2 => {
                let gain = g.param(&format!("{prefix}.gain"))?;
                let bias = g.param(&format!("{prefix}.bias"))?;
                Ok(g.layer_norm(x, gain, Some(bias), eps))
            }
            Variant::Llama => {
                let gain = g.param(&format!("{prefix}.gain"))?;
                Ok(g.rms_norm(x, gain, eps))
            }
        }
    }

    fn linear(&self, g: &mut Graph<'_>, x: NodeId, prefix: &str) -> Result<NodeId> {
        let w = g.param(&format!("{prefix}.weight"))?;
        let bias_name = format!("{prefix}.bias");
        let b = if self.params.contains(&bias_name) {
            Some(g.param(&bias_name)?)
        } else {
            None
        };
        Ok(g.linear(x, w, b))
    }

    /// Runs the block stack over `(batch·n_patches) × hidden` token rows.
    pub fn record_blocks(&self, g: &mut Graph<'_>, mut x: NodeId, batch: usize) -> Result<NodeId> {
        let c = &self.config;
        let spec = AttentionSpec {
            batch,
            tokens: self.n_patches(),
            n_heads: c.n_heads,
            n_kv_heads: c.n_kv_groups,
            head_dim: c.head_dim(),
            causal: c.causal,
        };
        let rotary = match c.variant {
            Variant::Llama => Some(g.param("rotary.inv_freq")?),
            Variant::Gpt2 => None,
        };
        let (n1, n2) = match c.variant {
            Variant::Gpt2 => ("ln_1", "ln_2"),
            Variant::Llama => ("rms_1", "rms_2"),
        };
        for i in 0..c.n_layers {
            let b = format!("blocks.{i}");
            let a = self.norm(g, x, &format!("{b}.{n1}"))?;
            let q = self.linear(g, a, &format!("{b}.attn.q"))?;
            let k = self.linear(g, a, &format!("{b}.attn.k"))?;
            let v = self.linear(g, a, &format!("{b}.attn.v"))?;
            let o = g.attention(q, k, v, rotary, spec);
            let o = self.linear(g, o, &format!("{b}.attn.proj"))?;
            x = g.add(x, o);

            let m = self.norm(g, x, &format!("{b}.{n2}"))?;
            let f = match c.activation {
                FfnActivation::Gelu => {
                    let hdn = self.linear(g, m, &format!("{b}.mlp.fc_in"))?;
                    let hdn = g.act(hdn, Activation::Gelu);
                    self.linear(g, hdn, &format!("{b}.mlp.fc_out"))?
                }
                FfnActivation::Swiglu => {
                    let gate = self.linear(g, m, &format!("{b}.mlp.gate"))?;
                    let gate = g.act(gate, Activation::Silu);
                    let up = self.linear(g, m, &format!("{b}.mlp.up"))?;
                    let hdn = g.mul(gate, up);
                    self.linear(g, hdn, &format!("{b}.mlp.down"))?
                }
            };
            x = g.add(x, f);
        }
        self.norm(g, x, "final_norm")
    }

    /// Block-stack output (after the final norm) for pre-embedded tokens.
    pub fn encode_tokens(&self, tokens: &Array2<f64>, batch: usize) -> Result<Array2<f64>> {
        let want = (batch * self.n_patches(), self.config.hidden);
        if tokens.dim() != want {
            return Err(Error::Shape(format!(
                "tokens {:?}, expected {want:?}",
                tokens.dim()
            )));
        }
        let mut g = Graph::new(&self.params, false);
        let x = g.constant(tokens.clone());
        let out = self.record_blocks(&mut g, x, batch)?;
        Ok(g.value(out).clone())
    }
}

/// Batched forecast on standardized windows; outputs are denormalized with
/// each window's own RevIN state.
pub fn forward_forecast(model: &ForecastModel, batch: &Array2<f64>) -> Result<Array2<f64>> {
    model.predict(batch)
}

impl Forecaster for ForecastModel {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn pred_len(&self) -> usize {
        self.config.pred_len
    }

    fn params(&self) -> &ParameterStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    fn forward_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        batch: &Array2<f64>,
        _phase: Phase<'_>,
    ) -> Result<NodeId> {
        let (patches, states) = self.tokenize(batch)?;
        let n_b = batch.nrows();
        let n_p = self.n_patches();
        let tokens = g.constant(patches);
        let mut x = self.linear(g, tokens, "embed")?;
        if self.config.variant == Variant::Gpt2 {
            let table = g.param("pos.weight")?;
            let idx = (0..n_b).flat_map(|_| 0..n_p).collect();
            let pos = g.gather_rows(table, idx);
            x = g.add(x, pos);
        }
        let h = self.record_blocks(g, x, n_b)?;
        let flat = g.reshape(h, n_b, n_p * self.config.hidden);
        let y = self.linear(g, flat, "head")?;
        let scale = states.iter().map(RevinState::scale).collect();
        let shift = states.iter().map(|s| s.mean).collect();
        Ok(g.row_affine(y, scale, shift))
    }
}
