//! Reference forecasters: a small dense network (ANN), a deeper dense network
//! with dropout (MLP), a single-layer LSTM, and a PatchTST-style encoder.
//!
//! ANN, MLP and LSTM read the standardized window directly. PatchTST shares
//! the backbone's RevIN + patching path.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autograd::{Activation, Graph, NodeId};
use crate::backbone::{build_backbone, BackboneConfig, FfnActivation, ForecastModel, Variant};
use crate::error::{Error, Result};
use crate::model::{check_batch, dropout_mask, Forecaster, Phase};
use crate::params::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Ann,
    Mlp,
    Lstm,
    Patchtst,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ann" => Ok(Self::Ann),
            "mlp" => Ok(Self::Mlp),
            "lstm" => Ok(Self::Lstm),
            "patchtst" => Ok(Self::Patchtst),
            other => Err(Error::Config(format!("unknown baseline kind `{other}`"))),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ann => "ann",
            Self::Mlp => "mlp",
            Self::Lstm => "lstm",
            Self::Patchtst => "patchtst",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub seq_len: usize,
    pub pred_len: usize,
    /// Hidden widths of the dense networks.
    pub hidden_sizes: Vec<usize>,
    pub dropout: f64,
    /// LSTM hidden units.
    pub units: usize,
    pub patch_len: usize,
    pub stride: usize,
    /// PatchTST encoder depth, width, heads and FFN width.
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub seed: u64,
}

impl BaselineConfig {
    /// Defaults for `kind` with a 7-step window and next-step target.
    pub fn for_kind(kind: BaselineKind) -> Self {
        let mut c = Self {
            kind,
            seq_len: 7,
            pred_len: 1,
            hidden_sizes: vec![],
            dropout: 0.0,
            units: 0,
            patch_len: 16,
            stride: 8,
            n_layers: 3,
            d_model: 128,
            n_heads: 8,
            ffn_dim: 256,
            seed: 0,
        };
        match kind {
            BaselineKind::Ann => c.hidden_sizes = vec![32, 16],
            BaselineKind::Mlp => {
                c.hidden_sizes = vec![64, 32];
                c.dropout = 0.4;
            }
            BaselineKind::Lstm => {
                c.units = 50;
                c.dropout = 0.4;
            }
            BaselineKind::Patchtst => {}
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.seq_len == 0 || self.pred_len == 0 {
            return err("seq_len and pred_len must be positive".into());
        }
        match self.kind {
            BaselineKind::Ann | BaselineKind::Mlp => {
                if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
                    return err(format!(
                        "hidden sizes must be positive, got {:?}",
                        self.hidden_sizes
                    ));
                }
            }
            BaselineKind::Lstm if self.units == 0 => {
                return err("lstm units must be positive".into())
            }
            _ => {}
        }
        Ok(())
    }

    fn patchtst_backbone(&self) -> BackboneConfig {
        BackboneConfig {
            variant: Variant::Gpt2,
            n_layers: self.n_layers,
            hidden: self.d_model,
            n_heads: self.n_heads,
            n_kv_groups: self.n_heads,
            ffn_dim: self.ffn_dim,
            max_positions: 512,
            seq_len: self.seq_len,
            patch_len: self.patch_len,
            stride: self.stride,
            pred_len: self.pred_len,
            activation: FfnActivation::Gelu,
            rope_base: 10_000.0,
            norm_eps: 1e-5,
            causal: false,
        }
    }
}

/// Fully connected stack `fc0 … fcN` with ReLU between layers.
#[derive(Debug, Clone)]
pub struct DenseNet {
    params: ParameterStore,
    layers: usize,
    seq_len: usize,
    pred_len: usize,
    dropout: f64,
    kind: BaselineKind,
}

#[derive(Debug, Clone)]
pub struct LstmNet {
    params: ParameterStore,
    units: usize,
    seq_len: usize,
    pred_len: usize,
    dropout: f64,
}

#[derive(Debug, Clone)]
pub enum Baseline {
    Dense(DenseNet),
    Lstm(LstmNet),
    PatchTst(ForecastModel),
}

/// Glorot-uniform weights, zero biases.
fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng))
}

pub fn build_baseline(config: &BaselineConfig) -> Result<Baseline> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match config.kind {
        BaselineKind::Ann | BaselineKind::Mlp => {
            let mut params = ParameterStore::new();
            let mut widths = vec![config.seq_len];
            widths.extend(&config.hidden_sizes);
            widths.push(config.pred_len);
            for (i, pair) in widths.windows(2).enumerate() {
                params.insert(
                    format!("fc{i}.weight"),
                    glorot(&mut rng, pair[0], pair[1]),
                    true,
                );
                params.insert(format!("fc{i}.bias"), Array2::zeros((1, pair[1])), true);
            }
            Ok(Baseline::Dense(DenseNet {
                params,
                layers: widths.len() - 1,
                seq_len: config.seq_len,
                pred_len: config.pred_len,
                dropout: config.dropout,
                kind: config.kind,
            }))
        }
        BaselineKind::Lstm => {
            let u = config.units;
            let mut params = ParameterStore::new();
            params.insert("lstm.w_ih", glorot(&mut rng, 1, 4 * u), true);
            params.insert("lstm.w_hh", glorot(&mut rng, u, 4 * u), true);
            // gate order i, f, g, o; forget gate starts open
            let mut bias = Array2::zeros((1, 4 * u));
            bias.slice_mut(ndarray::s![.., u..2 * u]).fill(1.0);
            params.insert("lstm.bias", bias, true);
            params.insert("dense.weight", glorot(&mut rng, u, config.pred_len), true);
            params.insert("dense.bias", Array2::zeros((1, config.pred_len)), true);
            Ok(Baseline::Lstm(LstmNet {
                params,
                units: u,
                seq_len: config.seq_len,
                pred_len: config.pred_len,
                dropout: config.dropout,
            }))
        }
        BaselineKind::Patchtst => {
            let model = build_backbone(&config.patchtst_backbone(), config.seed)?;
            Ok(Baseline::PatchTst(model.with_label("PatchTST")))
        }
    }
}

fn dropout<'a>(g: &mut Graph<'a>, x: NodeId, rate: f64, phase: &mut Phase<'_>) -> NodeId {
    match phase {
        Phase::Train(rng) if rate > 0.0 => {
            let (r, c) = g.value(x).dim();
            let mask = dropout_mask(&mut **rng, r, c, rate);
            g.mul_const(x, mask)
        }
        _ => x,
    }
}

impl DenseNet {
    fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        batch: &Array2<f64>,
        mut phase: Phase<'_>,
    ) -> Result<NodeId> {
        check_batch(batch, self.seq_len)?;
        let mut x = g.constant(batch.clone());
        for i in 0..self.layers {
            let w = g.param(&format!("fc{i}.weight"))?;
            let b = g.param(&format!("fc{i}.bias"))?;
            x = g.linear(x, w, Some(b));
            if i + 1 < self.layers {
                x = g.act(x, Activation::Relu);
                x = dropout(g, x, self.dropout, &mut phase);
            }
        }
        Ok(x)
    }
}

impl LstmNet {
    fn forward<'a>(
        &'a self,
        g: &mut Graph<'a>,
        batch: &Array2<f64>,
        mut phase: Phase<'_>,
    ) -> Result<NodeId> {
        check_batch(batch, self.seq_len)?;
        let u = self.units;
        let w_ih = g.param("lstm.w_ih")?;
        let w_hh = g.param("lstm.w_hh")?;
        let bias = g.param("lstm.bias")?;
        let input = g.constant(batch.clone());
        let mut state: Option<(NodeId, NodeId)> = None;
        for t in 0..self.seq_len {
            let x_t = g.slice_cols(input, t, 1);
            let mut z = g.linear(x_t, w_ih, Some(bias));
            if let Some((h, _)) = state {
                let rec = g.matmul(h, w_hh);
                z = g.add(z, rec);
            }
            let i = g.slice_cols(z, 0, u);
            let i = g.act(i, Activation::Sigmoid);
            let f = g.slice_cols(z, u, u);
            let f = g.act(f, Activation::Sigmoid);
            let cand = g.slice_cols(z, 2 * u, u);
            let cand = g.act(cand, Activation::Tanh);
            let o = g.slice_cols(z, 3 * u, u);
            let o = g.act(o, Activation::Sigmoid);
            let mut c = g.mul(i, cand);
            if let Some((_, c_prev)) = state {
                let keep = g.mul(f, c_prev);
                c = g.add(c, keep);
            }
            let tc = g.act(c, Activation::Tanh);
            let h = g.mul(o, tc);
            state = Some((h, c));
        }
        let (h, _) = state.expect("seq_len > 0");
        let h = dropout(g, h, self.dropout, &mut phase);
        let w = g.param("dense.weight")?;
        let b = g.param("dense.bias")?;
        Ok(g.linear(h, w, Some(b)))
    }
}

impl Baseline {
    pub fn kind(&self) -> BaselineKind {
        match self {
            Baseline::Dense(d) => d.kind,
            Baseline::Lstm(_) => BaselineKind::Lstm,
            Baseline::PatchTst(_) => BaselineKind::Patchtst,
        }
    }

    pub fn units(&self) -> Option<usize> {
        match self {
            Baseline::Lstm(l) => Some(l.units),
            _ => None,
        }
    }
}

impl Forecaster for Baseline {
    fn label(&self) -> String {
        match self {
            Baseline::Dense(d) => d.kind.to_string().to_uppercase(),
            Baseline::Lstm(_) => "LSTM".into(),
            Baseline::PatchTst(m) => m.label(),
        }
    }

    fn seq_len(&self) -> usize {
        match self {
            Baseline::Dense(d) => d.seq_len,
            Baseline::Lstm(l) => l.seq_len,
            Baseline::PatchTst(m) => m.seq_len(),
        }
    }

    fn pred_len(&self) -> usize {
        match self {
            Baseline::Dense(d) => d.pred_len,
            Baseline::Lstm(l) => l.pred_len,
            Baseline::PatchTst(m) => m.pred_len(),
        }
    }

    fn params(&self) -> &ParameterStore {
        match self {
            Baseline::Dense(d) => &d.params,
            Baseline::Lstm(l) => &l.params,
            Baseline::PatchTst(m) => &m.params,
        }
    }

    fn params_mut(&mut self) -> &mut ParameterStore {
        match self {
            Baseline::Dense(d) => &mut d.params,
            Baseline::Lstm(l) => &mut l.params,
            Baseline::PatchTst(m) => &mut m.params,
        }
    }

    fn forward_graph<'a>(
        &'a self,
        graph: &mut Graph<'a>,
        batch: &Array2<f64>,
        phase: Phase<'_>,
    ) -> Result<NodeId> {
        match self {
            Baseline::Dense(d) => d.forward(graph, batch, phase),
            Baseline::Lstm(l) => l.forward(graph, batch, phase),
            Baseline::PatchTst(m) => m.forward_graph(graph, batch, phase),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::Rng;

    fn batch(seed: u64, rows: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, 7), |_| rng.random_range(-2.0..2.0))
    }

    /// Parameter count from the layer shapes, enumerated independently.
    fn dense_count(widths: &[usize]) -> usize {
        let mut n = 0;
        for i in 1..widths.len() {
            n += widths[i - 1] * widths[i];
            n += widths[i];
        }
        n
    }

    #[test]
    fn ann_has_801_parameters() {
        let m = build_baseline(&BaselineConfig::for_kind(BaselineKind::Ann)).unwrap();
        assert_eq!(m.params().num_elements(), 801);
        assert_eq!(dense_count(&[7, 32, 16, 1]), 801);
        assert_eq!(m.label(), "ANN");
        let mlp = build_baseline(&BaselineConfig::for_kind(BaselineKind::Mlp)).unwrap();
        assert_eq!(mlp.params().num_elements(), dense_count(&[7, 64, 32, 1]));
    }

    #[test]
    fn lstm_is_single_layer_with_50_units() {
        let m = build_baseline(&BaselineConfig::for_kind(BaselineKind::Lstm)).unwrap();
        assert_eq!(m.units(), Some(50));
        assert_eq!(m.params().get("lstm.w_hh").unwrap().dim(), (50, 200));
        assert!(!m
            .params()
            .names()
            .any(|n| n.contains("layer1") || n.contains("lstm2")));
        assert_eq!(m.params().num_elements(), 200 + 50 * 200 + 200 + 50 + 1);
    }

    #[test]
    fn unknown_kind_and_bad_dropout() {
        assert!(matches!(
            "cnn".parse::<BaselineKind>(),
            Err(Error::Config(_))
        ));
        let c = BaselineConfig {
            dropout: 1.0,
            ..BaselineConfig::for_kind(BaselineKind::Mlp)
        };
        assert!(build_baseline(&c).is_err());
    }

    #[test]
    fn every_kind_predicts_b_by_pred_len_deterministically() {
        for kind in [
            BaselineKind::Ann,
            BaselineKind::Mlp,
            BaselineKind::Lstm,
            BaselineKind::Patchtst,
        ] {
            let m = build_baseline(&BaselineConfig::for_kind(kind)).unwrap();
            let x = batch(1, 2);
            let a = m.predict(&x).unwrap();
            assert_eq!(a.dim(), (2, 1), "{kind}");
            assert_eq!(a, m.predict(&x).unwrap());
            assert!(matches!(
                m.predict(&batch(1, 2).slice_move(ndarray::s![.., ..6])),
                Err(Error::Shape(_))
            ));
        }
    }

    #[test]
    fn dropout_only_acts_in_training() {
        let m = build_baseline(&BaselineConfig::for_kind(BaselineKind::Mlp)).unwrap();
        let x = batch(2, 4);
        let train_out = |m: &Baseline| {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut g = Graph::new(m.params(), false);
            let y = m.forward_graph(&mut g, &x, Phase::Train(&mut rng)).unwrap();
            g.value(y).clone()
        };
        assert_ne!(train_out(&m), m.predict(&x).unwrap());
        let no_drop = build_baseline(&BaselineConfig {
            dropout: 0.0,
            ..BaselineConfig::for_kind(BaselineKind::Mlp)
        })
        .unwrap();
        assert_eq!(train_out(&no_drop), no_drop.predict(&x).unwrap());
    }

    #[test]
    fn baseline_gradients_match_finite_differences() {
        let target = Array2::from_shape_fn((3, 1), |(i, _)| i as f64 * 0.3 - 0.2);
        for kind in [BaselineKind::Ann, BaselineKind::Lstm] {
            let c = BaselineConfig {
                units: 4,
                hidden_sizes: vec![5, 3],
                ..BaselineConfig::for_kind(kind)
            };
            let mut m = build_baseline(&c).unwrap();
            // zero biases can leave a ReLU exactly at its kink
            let names: Vec<String> = m.params().names().map(String::from).collect();
            for n in names.iter().filter(|n| n.ends_with("bias")) {
                m.params_mut().get_mut(n).unwrap().mapv_inplace(|v| v + 0.1);
            }
            let r = check_gradients(&mut m, &batch(4, 3), &target, 1e-6).unwrap();
            assert!(r.max_rel_error() < 1e-6, "{kind}: {:?}", r.worst());
        }
    }
}
