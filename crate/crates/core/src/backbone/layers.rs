//! Standalone transformer building blocks on plain arrays.
//!
//! These are the inference-only forms of the operations the model records on
//! the autograd tape; they share no code with the tape path, which makes
//! them usable as cross-checks.

use ndarray::{s, Array2, Array3};

use crate::autograd::Activation;
use crate::backbone::config::FfnActivation;
use crate::error::{Error, Result};

/// `(x - mean) / sqrt(var + eps) * gain + bias`, population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(gain)
        .zip(bias)
        .map(|((v, g), b)| (v - mean) * inv * g + b)
        .collect()
}

/// `x / sqrt(mean(x²) + eps) * gain`.
pub fn rms_norm(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * g).collect()
}

/// Per-pair rotation frequencies for rotary position encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RotaryTable {
    pub inv_freq: Vec<f64>,
    pub base: f64,
}

impl RotaryTable {
    /// `inv_freq[i] = base^(-2i / head_dim)`.
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rotary needs a positive even head_dim, got {head_dim}"
            )));
        }
        let inv_freq = (0..head_dim / 2)
            .map(|i| base.powf(-2.0 * i as f64 / head_dim as f64))
            .collect();
        Ok(Self { inv_freq, base })
    }

    pub fn head_dim(&self) -> usize {
        self.inv_freq.len() * 2
    }
}

/// Rotates each pair `(x[2i], x[2i+1])` of row `r` by `positions[r] * inv_freq[i]`.
/// `q` and `k` hold one head vector per row.
pub fn rotary_apply(
    q: &Array2<f64>,
    k: &Array2<f64>,
    positions: &[usize],
    table: &RotaryTable,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let rotate = |x: &Array2<f64>| -> Result<Array2<f64>> {
        if !x.ncols().is_multiple_of(2) {
            return Err(Error::Config(format!("odd head_dim {}", x.ncols())));
        }
        if x.ncols() != table.head_dim() || x.nrows() != positions.len() {
            return Err(Error::Shape(format!(
                "rotary input {:?} vs head_dim {} and {} positions",
                x.dim(),
                table.head_dim(),
                positions.len()
            )));
        }
        let mut out = x.clone();
        for (r, &pos) in positions.iter().enumerate() {
            for (i, f) in table.inv_freq.iter().enumerate() {
                let angle = pos as f64 * f;
                let (sin, cos) = angle.sin_cos();
                let (a, b) = (x[[r, 2 * i]], x[[r, 2 * i + 1]]);
                out[[r, 2 * i]] = a * cos - b * sin;
                out[[r, 2 * i + 1]] = a * sin + b * cos;
            }
        }
        Ok(out)
    };
    Ok((rotate(q)?, rotate(k)?))
}

/// Attention where query head `h` reads key/value head
/// `h / (n_heads / n_kv_groups)`.
///
/// `q` is `n_heads × T × d`; `k` and `v` are `n_kv_groups × T × d`.
pub fn grouped_query_attention(
    q: &Array3<f64>,
    k: &Array3<f64>,
    v: &Array3<f64>,
    causal: bool,
) -> Result<Array3<f64>> {
    let (n_heads, t, d) = q.dim();
    let n_kv = k.dim().0;
    if n_kv == 0 || n_heads % n_kv != 0 {
        return Err(Error::Config(format!(
            "n_heads ({n_heads}) must be divisible by n_kv_groups ({n_kv})"
        )));
    }
    if k.dim() != (n_kv, t, d) || v.dim() != (n_kv, t, d) {
        return Err(Error::Shape(format!(
            "q {:?}, k {:?}, v {:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    let per_group = n_heads / n_kv;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Array3::zeros((n_heads, t, d));
    for h in 0..n_heads {
        let g = h / per_group;
        for i in 0..t {
            let visible = if causal { i + 1 } else { t };
            let scores: Vec<f64> = (0..visible)
                .map(|j| (0..d).map(|c| q[[h, i, c]] * k[[g, j, c]]).sum::<f64>() * scale)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            for c in 0..d {
                out[[h, i, c]] = (0..visible).map(|j| exps[j] / total * v[[g, j, c]]).sum();
            }
        }
    }
    Ok(out)
}

/// Feed-forward weights, stored as `in × out` matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum FfnWeights {
    Gelu {
        w_in: Array2<f64>,
        b_in: Vec<f64>,
        w_out: Array2<f64>,
        b_out: Vec<f64>,
    },
    Swiglu {
        gate: Array2<f64>,
        up: Array2<f64>,
        down: Array2<f64>,
    },
}

impl FfnWeights {
    fn activation(&self) -> FfnActivation {
        match self {
            Self::Gelu { .. } => FfnActivation::Gelu,
            Self::Swiglu { .. } => FfnActivation::Swiglu,
        }
    }
}

/// Position-wise feed-forward on one token vector.
pub fn ffn_forward(x: &[f64], weights: &FfnWeights, activation: FfnActivation) -> Result<Vec<f64>> {
    if weights.activation() != activation {
        return Err(Error::Shape(format!(
            "{activation:?} requested with {:?} weights",
            weights.activation()
        )));
    }
    let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
    let check = |w: &Array2<f64>, rows: usize, what: &str| -> Result<()> {
        if w.nrows() != rows {
            return Err(Error::Shape(format!(
                "{what} expects {} inputs, got {rows}",
                w.nrows()
            )));
        }
        Ok(())
    };
    let y = match weights {
        FfnWeights::Gelu {
            w_in,
            b_in,
            w_out,
            b_out,
        } => {
            check(w_in, x.ncols(), "ffn in")?;
            check(w_out, w_in.ncols(), "ffn out")?;
            if b_in.len() != w_in.ncols() || b_out.len() != w_out.ncols() {
                return Err(Error::Shape("ffn bias width mismatch".into()));
            }
            let mut h = x.dot(w_in);
            for (e, b) in h.iter_mut().zip(b_in) {
                *e = Activation::Gelu.apply(*e + b);
            }
            let mut y = h.dot(w_out);
            for (e, b) in y.iter_mut().zip(b_out) {
                *e += b;
            }
            y
        }
        FfnWeights::Swiglu { gate, up, down } => {
            check(gate, x.ncols(), "ffn gate")?;
            check(up, x.ncols(), "ffn up")?;
            if gate.ncols() != up.ncols() {
                return Err(Error::Shape("gate and up widths differ".into()));
            }
            check(down, gate.ncols(), "ffn down")?;
            let g = x.dot(gate).mapv(|e| Activation::Silu.apply(e));
            (g * x.dot(up)).dot(down)
        }
    };
    Ok(y.slice(s![0, ..]).to_vec())
}
