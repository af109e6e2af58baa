//! The interface shared by the transformer backbones and the baselines, so
//! that training and evaluation never need to know which one they drive.

use ndarray::Array2;
use rand::RngCore;

use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::ParameterStore;

/// Whether a forward pass may use stochastic layers.
pub enum Phase<'r> {
    Inference,
    /// Dropout masks are drawn from the supplied generator.
    Train(&'r mut dyn RngCore),
}

pub trait Forecaster {
    /// Human-readable model label, e.g. `GPT-2` or `LSTM`.
    fn label(&self) -> String;

    fn seq_len(&self) -> usize;

    fn pred_len(&self) -> usize;

    fn params(&self) -> &ParameterStore;

    fn params_mut(&mut self) -> &mut ParameterStore;

    /// Records the forward pass for a `B × seq_len` batch of standardized
    /// windows and returns the `B × pred_len` prediction node.
    fn forward_graph<'a>(
        &'a self,
        graph: &mut Graph<'a>,
        batch: &Array2<f64>,
        phase: Phase<'_>,
    ) -> Result<NodeId>;

    /// Deterministic inference.
    fn predict(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        let mut g = Graph::new(self.params(), false);
        let out = self.forward_graph(&mut g, batch, Phase::Inference)?;
        Ok(g.value(out).clone())
    }
}

pub(crate) fn check_batch(batch: &Array2<f64>, seq_len: usize) -> Result<()> {
    if batch.ncols() != seq_len {
        return Err(Error::Shape(format!(
            "model expects windows of {seq_len} steps, got {}",
            batch.ncols()
        )));
    }
    if batch.nrows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// Inverted-dropout mask: kept entries are scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask(
    rng: &mut dyn RngCore,
    rows: usize,
    cols: usize,
    rate: f64,
) -> Array2<f64> {
    use rand::Rng;
    let keep = 1.0 - rate;
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            1.0 / keep
        }
    })
}
