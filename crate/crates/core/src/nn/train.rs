//! Mini-batch RMSProp training with early stopping, learning-rate reduction
//! on plateau and best-weight checkpointing.

use ndarray::{Array2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::CarleNet;
use super::optim::RmsProp;
use crate::error::{Error, Result};
use crate::metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// `None` disables early stopping.
    pub early_stopping_patience: Option<usize>,
    /// `None` disables learning-rate reduction.
    pub lr_patience: Option<usize>,
    pub lr_factor: f64,
    pub min_lr: f64,
    /// Minimum decrease of the monitored loss that counts as improvement.
    pub min_delta: f64,
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-7,
            early_stopping_patience: Some(25),
            lr_patience: Some(10),
            lr_factor: 0.5,
            min_lr: 1e-6,
            min_delta: 0.0,
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::param("batch_size and max_epochs must be positive"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::param(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor)));
        }
        if !(self.min_lr >= 0.0 && self.min_delta >= 0.0) {
            return Err(Error::param("min_lr and min_delta must be non-negative"));
        }
        RmsProp::new(self.learning_rate, self.rho, self.epsilon).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub rmse: f64,
    pub mae: f64,
    pub val_rmse: Option<f64>,
    pub val_mae: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

impl EpochRecord {
    /// Validation RMSE when available, training RMSE otherwise.
    pub fn monitored(&self) -> f64 {
        self.val_rmse.unwrap_or(self.rmse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
    pub optimizer: RmsProp,
}

/// Stops once the monitored loss has not improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { patience, min_delta, best: f64::INFINITY, wait: 0 }
    }

    /// True when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.wait = 0;
            false
        } else {
            self.wait += 1;
            self.wait >= self.patience
        }
    }
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// improvement, never going below `min_lr`.
#[derive(Debug, Clone)]
pub struct ReduceLrOnPlateau {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    pub min_delta: f64,
    best: f64,
    wait: usize,
}

impl ReduceLrOnPlateau {
    pub fn new(patience: usize, factor: f64, min_lr: f64, min_delta: f64) -> Self {
        Self { patience, factor, min_lr, min_delta, best: f64::INFINITY, wait: 0 }
    }

    /// Returns the learning rate for the next epoch.
    pub fn update(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience.max(1) {
            self.wait = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

/// Keeps the weights with the lowest monitored loss.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub best_loss: f64,
    pub best_epoch: usize,
    pub weights: Vec<Array2<f64>>,
}

impl ModelCheckpoint {
    pub fn new(initial: Vec<Array2<f64>>) -> Self {
        Self { best_loss: f64::INFINITY, best_epoch: 0, weights: initial }
    }

    pub fn update(&mut self, epoch: usize, loss: f64, net: &CarleNet) {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.weights = net.weights();
        }
    }
}

fn evaluate(net: &CarleNet, x: ArrayView3<'_, f64>, y: &[f64]) -> Result<(f64, f64)> {
    let p = net.predict(x)?;
    let p = p.as_slice().expect("contiguous");
    Ok((metrics::rmse(y, p)?, metrics::mae(y, p)?))
}

/// Trains `net` in place and leaves it holding the best weights seen. The
/// LSTM layers are stateless, so there is no recurrent state to reset
/// between epochs.
pub fn train(
    net: &mut CarleNet,
    x: ArrayView3<'_, f64>,
    y: &[f64],
    validation: Option<(ArrayView3<'_, f64>, &[f64])>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let n = x.len_of(Axis(0));
    if n == 0 {
        return Err(Error::input("training set is empty"));
    }
    if n != y.len() {
        return Err(Error::shape("training targets", n, y.len()));
    }
    if let Some((vx, vy)) = validation {
        if vx.len_of(Axis(0)) != vy.len() || vy.is_empty() {
            return Err(Error::shape("validation targets", vx.len_of(Axis(0)), vy.len()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = RmsProp::new(cfg.learning_rate, cfg.rho, cfg.epsilon)?;
    let mut stopper = cfg.early_stopping_patience.map(|p| EarlyStopping::new(p, cfg.min_delta));
    let mut plateau = cfg
        .lr_patience
        .map(|p| ReduceLrOnPlateau::new(p, cfg.lr_factor, cfg.min_lr, cfg.min_delta));
    let mut checkpoint = ModelCheckpoint::new(net.weights());
    let mut history = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let lr = opt.learning_rate;
        let mut finite = true;
        for chunk in order.chunks(cfg.batch_size) {
            let bx = x.select(Axis(0), chunk);
            let by: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grads) = net.loss_and_grads(bx.view(), &by, 1.0 / chunk.len() as f64)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                finite = false;
                break;
            }
            opt.step(net.params_mut(), &grads);
        }
        let (rmse, mae) = if finite { evaluate(net, x, y)? } else { (f64::NAN, f64::NAN) };
        let val = match validation {
            Some((vx, vy)) if finite => Some(evaluate(net, vx, vy)?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            rmse,
            mae,
            val_rmse: val.map(|v| v.0),
            val_mae: val.map(|v| v.1),
            lr,
        };
        let monitored = record.monitored();
        if !monitored.is_finite() {
            net.set_weights(&checkpoint.weights)?;
            log::error!("non-finite loss at epoch {epoch}; restored weights from epoch {}", checkpoint.best_epoch);
            return Err(Error::NonFiniteLoss { epoch });
        }
        log::debug!("epoch {epoch}: rmse {rmse:.6} mae {mae:.6} lr {lr:e}");
        history.push(record);
        checkpoint.update(epoch, monitored, net);
        if let Some(p) = &mut plateau {
            opt.learning_rate = p.update(monitored, opt.learning_rate);
        }
        if let Some(s) = &mut stopper {
            if s.update(monitored) {
                stopped_early = true;
                break;
            }
        }
    }
    net.set_weights(&checkpoint.weights)?;
    Ok(TrainReport {
        history,
        best_epoch: checkpoint.best_epoch,
        best_loss: checkpoint.best_loss,
        stopped_early,
        optimizer: opt,
    })
}
