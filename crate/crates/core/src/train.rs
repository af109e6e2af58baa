//! Adam with per-epoch cosine annealing, gradient accumulation with loss
//! scaling, and validation-based early stopping.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph};
use crate::error::{Error, Result};
use crate::ingest::WindowSet;
use crate::model::{Forecaster, Phase};
use crate::params::{ParameterStore, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    ShortTerm,
    FewShot,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short_term" => Ok(Self::ShortTerm),
            "few_shot" => Ok(Self::FewShot),
            other => Err(Error::Config(format!("unknown protocol `{other}`"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ShortTerm => "short_term",
            Self::FewShot => "few_shot",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub accum_steps: usize,
    pub loss_scale: f64,
    pub seed: u64,
    pub protocol: Protocol,
    pub few_shot_fraction: f64,
}

impl Default for TrainConfig {
    /// GPT-2 row of the experimental settings: lr 1e-5, batch 32, 20 epochs,
    /// patience 5.
    fn default() -> Self {
        Self {
            base_lr: 1e-5,
            min_lr: 1e-7,
            batch_size: 32,
            max_epochs: 20,
            patience: 5,
            accum_steps: 1,
            loss_scale: 1.0,
            seed: 0,
            protocol: Protocol::ShortTerm,
            few_shot_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.max_epochs < 1 || self.patience < 1 || self.accum_steps < 1 || self.batch_size < 1 {
            return err(
                "max_epochs, patience, accum_steps and batch_size must be at least 1".into(),
            );
        }
        if self.base_lr.is_nan()
            || self.base_lr <= 0.0
            || self.min_lr.is_nan()
            || self.min_lr < 0.0
            || self.min_lr > self.base_lr
        {
            return err(format!(
                "need 0 <= min_lr <= base_lr with base_lr > 0, got {} / {}",
                self.min_lr, self.base_lr
            ));
        }
        if !self.loss_scale.is_finite() || self.loss_scale <= 0.0 {
            return err(format!(
                "loss_scale must be positive, got {}",
                self.loss_scale
            ));
        }
        if !(self.few_shot_fraction > 0.0 && self.few_shot_fraction <= 1.0) {
            return err(format!(
                "few_shot_fraction must be in (0, 1], got {}",
                self.few_shot_fraction
            ));
        }
        Ok(())
    }
}

/// `min_lr + ½(base_lr − min_lr)(1 + cos(π·epoch/max_epochs))`
pub fn cosine_lr(epoch: usize, config: &TrainConfig) -> Result<f64> {
    if epoch > config.max_epochs || config.max_epochs == 0 {
        return Err(Error::Config(format!(
            "epoch {epoch} outside [0, {}]",
            config.max_epochs
        )));
    }
    let t = epoch as f64 / config.max_epochs as f64;
    let w = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    Ok(config.min_lr * (1.0 - w) + config.base_lr * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct EarlyStopState {
    pub best_val_loss: f64,
    pub best_epoch: Option<usize>,
    pub epochs_since_improvement: usize,
    /// Trainable parameters at the best epoch.
    pub best_checkpoint: Option<Snapshot>,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self {
            best_val_loss: f64::INFINITY,
            best_epoch: None,
            epochs_since_improvement: 0,
            best_checkpoint: None,
        }
    }
}

impl EarlyStopState {
    /// Strict improvement resets the counter and snapshots `params`;
    /// anything else counts towards `patience`.
    pub fn update(
        &mut self,
        epoch: usize,
        val_loss: f64,
        patience: usize,
        params: Option<&ParameterStore>,
    ) -> Result<StopDecision> {
        if !val_loss.is_finite() {
            return Err(Error::NumericFailure(format!(
                "validation loss {val_loss} at epoch {epoch}"
            )));
        }
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_epoch = Some(epoch);
            self.epochs_since_improvement = 0;
            self.best_checkpoint = params.map(|p| p.snapshot(true));
        } else {
            self.epochs_since_improvement += 1;
        }
        Ok(if self.epochs_since_improvement >= patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        })
    }
}

/// Adam (β₁ 0.9, β₂ 0.999, ε 1e-8) with moment buffers for trainable
/// parameters only.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: IndexMap<String, Array2<f64>>,
    v: IndexMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ParameterStore) -> Self {
        let zeros = |n: &str| {
            let shape = params.get(n).expect("listed by the store").raw_dim();
            (n.to_string(), Array2::zeros(shape))
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.trainable_names().into_iter().map(zeros).collect(),
            v: params.trainable_names().into_iter().map(zeros).collect(),
        }
    }

    pub fn state_names(&self) -> Vec<&str> {
        self.m.keys().map(String::as_str).collect()
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterStore, grads: &Gradients, lr: f64) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (name, m) in self.m.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let v = self.v.get_mut(name).expect("paired buffers");
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let p = params.get_mut(name)?;
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Inference-mode MSE over the training windows before the first step.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub optimizer_steps: usize,
}

impl TrainHistory {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

/// Inference-mode MSE over a window set, in chunks of 256 rows.
pub fn mean_loss<M: Forecaster + ?Sized>(model: &M, windows: &WindowSet) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::InsufficientData {
            required: 1,
            actual: 0,
        });
    }
    let mut total = 0.0;
    let n = windows.len();
    for start in (0..n).step_by(256) {
        let rows: Vec<usize> = (start..(start + 256).min(n)).collect();
        let part = windows.select(&rows);
        let pred = model.predict(&part.inputs)?;
        total += (&pred - &part.targets).mapv(|e| e * e).sum();
    }
    Ok(total / (n * windows.pred_len) as f64)
}

fn epoch_rng(seed: u64, epoch: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 1) | purpose);
    rng
}

fn add_into(acc: &mut Gradients, grads: Gradients) {
    for (name, g) in grads {
        match acc.get_mut(&name) {
            Some(a) => *a += &g,
            None => {
                acc.insert(name, g);
            }
        }
    }
}

/// Trains the model's trainable parameters in place and restores the
/// best-validation snapshot. When `val` is empty, training loss drives early
/// stopping instead.
pub fn fit<M: Forecaster + ?Sized>(
    model: &mut M,
    train: &WindowSet,
    val: &WindowSet,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData {
            required: 1,
            actual: 0,
        });
    }
    if train.inputs.ncols() != model.seq_len() || train.targets.ncols() != model.pred_len() {
        return Err(Error::Shape(format!(
            "windows are {}→{}, model expects {}→{}",
            train.inputs.ncols(),
            train.targets.ncols(),
            model.seq_len(),
            model.pred_len()
        )));
    }

    let mut history = TrainHistory {
        initial_train_loss: mean_loss(model, train)?,
        best_val_loss: f64::INFINITY,
        ..Default::default()
    };
    let mut adam = Adam::new(model.params());
    let mut stop = EarlyStopState::default();
    let grad_divisor = config.loss_scale * config.accum_steps as f64;

    for epoch in 0..config.max_epochs {
        let lr = cosine_lr(epoch, config)?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut epoch_rng(config.seed, epoch, 0));
        let mut dropout_rng = epoch_rng(config.seed, epoch, 1);

        let mut acc = Gradients::new();
        let mut pending = 0;
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train.select(chunk);
            let grads = {
                let mut g = Graph::new(model.params(), true);
                let y =
                    model.forward_graph(&mut g, &batch.inputs, Phase::Train(&mut dropout_rng))?;
                let loss = g.mse(y, batch.targets.clone());
                let value = g.value(loss)[[0, 0]];
                if !value.is_finite() {
                    return Err(Error::NumericFailure(format!(
                        "training loss {value} at epoch {epoch}"
                    )));
                }
                loss_sum += value * chunk.len() as f64;
                let scaled = g.scale(loss, config.loss_scale);
                g.backward(scaled)
            };
            add_into(&mut acc, grads);
            pending += 1;
            if pending == config.accum_steps {
                acc.values_mut().for_each(|g| *g /= grad_divisor);
                adam.step(model.params_mut(), &acc, lr)?;
                history.optimizer_steps += 1;
                acc.clear();
                pending = 0;
            }
        }
        if pending > 0 {
            // tail of the epoch: average over the micro-batches actually seen
            let divisor = config.loss_scale * pending as f64;
            acc.values_mut().for_each(|g| *g /= divisor);
            adam.step(model.params_mut(), &acc, lr)?;
            history.optimizer_steps += 1;
        }

        let train_loss = loss_sum / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss(model, val)?
        };
        debug!("epoch {epoch}: lr {lr:.3e} train {train_loss:.6} val {val_loss:.6}");
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        history.epochs_run = epoch + 1;
        if stop.update(epoch, val_loss, config.patience, Some(model.params()))?
            == StopDecision::Stop
        {
            history.stopped_early = true;
            info!(
                "early stop after epoch {epoch}; best epoch {:?}",
                stop.best_epoch
            );
            break;
        }
    }

    if let Some(best) = &stop.best_checkpoint {
        model.params_mut().restore(best)?;
    }
    history.best_epoch = stop.best_epoch;
    history.best_val_loss = stop.best_val_loss;
    Ok(history)
}
