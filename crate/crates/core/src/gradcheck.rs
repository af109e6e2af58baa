//! Central finite-difference verification of tape gradients.

use ndarray::Array2;

use crate::autograd::Graph;
use crate::error::Result;
use crate::model::{Forecaster, Phase};

/// Lower bound on the relative-error denominator. Some parameters have an
/// identically zero gradient (a key bias shifts every attention logit of a
/// row equally), where finite differences only see rounding noise.
pub const NORM_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, NORM_FLOOR)`.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn loss<M: Forecaster + ?Sized>(
    model: &M,
    batch: &Array2<f64>,
    target: &Array2<f64>,
) -> Result<f64> {
    let mut g = Graph::new(model.params(), false);
    let y = model.forward_graph(&mut g, batch, Phase::Inference)?;
    let l = g.mse(y, target.clone());
    Ok(g.value(l)[[0, 0]])
}

/// Compares the tape's MSE gradients with central differences of step `h`
/// for every element of every trainable parameter. Runs in inference phase,
/// so dropout is off.
pub fn check_gradients<M: Forecaster + ?Sized>(
    model: &mut M,
    batch: &Array2<f64>,
    target: &Array2<f64>,
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = {
        let mut g = Graph::new(model.params(), true);
        let y = model.forward_graph(&mut g, batch, Phase::Inference)?;
        let l = g.mse(y, target.clone());
        g.backward(l)
    };
    let names: Vec<String> = model
        .params()
        .trainable_names()
        .into_iter()
        .map(String::from)
        .collect();
    let mut report = GradCheckReport::default();
    for name in names {
        let shape = model.params().get(&name)?.dim();
        let mut numeric = Array2::zeros(shape);
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = model.params().get(&name)?[[r, c]];
                model.params_mut().get_mut(&name)?[[r, c]] = orig + h;
                let plus = loss(model, batch, target)?;
                model.params_mut().get_mut(&name)?[[r, c]] = orig - h;
                let minus = loss(model, batch, target)?;
                model.params_mut().get_mut(&name)?[[r, c]] = orig;
                numeric[[r, c]] = (plus - minus) / (2.0 * h);
            }
        }
        let a = analytic
            .get(&name)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(shape));
        let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = norm(&(&a - &numeric));
        let scale = norm(&a).max(norm(&numeric));
        let rel_error = diff / scale.max(NORM_FLOOR);
        report.entries.push(GradCheckEntry {
            name,
            rel_error,
            analytic_norm: norm(&a),
        });
    }
    Ok(report)
}
