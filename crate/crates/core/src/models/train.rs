//! Mini-batch Adam training with early stopping and a plateau learning-rate
//! schedule.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dense::{Architecture, DenseNet, Head, Mode};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Epochs without validation improvement before the learning rate drops.
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub validation_fraction: f64,
    pub hidden_units: usize,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            max_epochs: 300,
            batch_size: 32,
            patience: 15,
            lr_patience: 5,
            lr_factor: 0.1,
            validation_fraction: 0.1,
            hidden_units: 128,
            dropout: 0.3,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_epochs == 0 || self.batch_size == 0 || self.patience == 0 || self.lr_patience == 0 {
            return bad("epochs, batch size and patience values must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad("learning rate must be positive and lr_factor in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.hidden_units == 0 || !(0.0..1.0).contains(&self.dropout) {
            return bad("hidden_units must be positive and dropout in [0, 1)");
        }
        Ok(())
    }

    pub fn architecture(&self, kind: ModelKind, input_dim: usize) -> Architecture {
        let base = match kind {
            ModelKind::Regressor => Architecture::regressor(input_dim),
            ModelKind::Classifier => Architecture::classifier(input_dim),
        };
        let depth = base.hidden.len();
        Architecture {
            hidden: vec![self.hidden_units; depth],
            dropout: self.dropout,
            bn_momentum: self.bn_momentum,
            bn_epsilon: self.bn_epsilon,
            ..base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Regressor,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub n_train: usize,
    pub n_val: usize,
}

/// A trained network together with the target scaling it was trained on.
/// Regression targets are standardised with training-split statistics;
/// classifier targets are left as 0/1 (mean 0, std 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNet {
    pub net: DenseNet,
    pub target_mean: f64,
    pub target_std: f64,
}

impl TrainedNet {
    /// Predictions in target units for row-major inputs.
    pub fn predict(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let out = self.net.predict(x, rows);
        match self.net.arch.head {
            Head::Regression => out.into_iter().map(|v| v * self.target_std + self.target_mean).collect(),
            Head::Binary => out,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
}

fn gather(x: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    idx.iter().flat_map(|&i| x[i].iter().copied()).collect()
}

/// Train a dense model on already projected inputs.
pub fn train_dense(x: &[Vec<f64>], y: &[f64], cfg: &TrainConfig, kind: ModelKind) -> Result<(TrainedNet, TrainingHistory)> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(Error::Data(format!("{} input rows but {} targets", x.len(), y.len())));
    }
    let dim = x.first().map(Vec::len).ok_or_else(|| Error::Data("no training rows".into()))?;
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(Error::Data("training rows must share a positive width".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("training data contains non-finite values".into()));
    }
    if kind == ModelKind::Classifier && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data("classifier targets must be 0 or 1".into()));
    }

    let n = x.len();
    let n_val = (cfg.validation_fraction * n as f64).round() as usize;
    if n_val == 0 {
        return Err(Error::Config(format!("validation split of {n} rows is empty")));
    }
    if n_val >= n {
        return Err(Error::Config("validation split leaves no training rows".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(cfg.seed, "validation-split", 0));
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let (target_mean, target_std) = match kind {
        ModelKind::Regressor => {
            let t: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
            let mean = t.iter().sum::<f64>() / t.len() as f64;
            let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64;
            let std = if var > 0.0 { var.sqrt() } else { 1.0 };
            (mean, std)
        }
        ModelKind::Classifier => (0.0, 1.0),
    };
    let scaled: Vec<f64> = y.iter().map(|v| (v - target_mean) / target_std).collect();
    // reported losses are in target units
    let loss_scale = target_std * target_std;

    let arch = cfg.architecture(kind, dim);
    let mut init_rng = seed::rng(cfg.seed, "init", 0);
    let mut net = DenseNet::new(arch, &mut init_rng)?;
    let mut adam = Adam::new(net.n_params());
    let mut rng = seed::rng(cfg.seed, "epochs", 0);

    let x_val = gather(x, val_idx);
    let y_val: Vec<f64> = val_idx.iter().map(|&i| scaled[i]).collect();

    let mut lr = cfg.learning_rate;
    let mut best = (f64::INFINITY, 0usize, net.clone());
    let mut since_best = 0;
    let mut lr_best = f64::INFINITY;
    let mut since_lr_best = 0;
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            // a single-row batch has no batch-norm variance to learn from
            if batch.len() < 2 && net.arch.batch_norm {
                continue;
            }
            let xb = gather(x, batch);
            let yb: Vec<f64> = batch.iter().map(|&i| scaled[i]).collect();
            let masks = net.sample_masks(batch.len(), &mut rng);
            let (loss, grad) = net.train_step_gradients(&xb, &yb, Some(&masks));
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            adam.step(&mut net.params, &grad, lr, cfg);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64 * loss_scale;
        let val_loss = net.loss(&x_val, &y_val, Mode::Inference, None) * loss_scale;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("non-finite validation loss at epoch {epoch}")));
        }
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.1e}");
        epochs.push(EpochRecord { epoch, train_loss, val_loss, learning_rate: lr });

        if val_loss < best.0 {
            best = (val_loss, epoch, net.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if val_loss < lr_best {
            lr_best = val_loss;
            since_lr_best = 0;
        } else {
            since_lr_best += 1;
            if since_lr_best >= cfg.lr_patience {
                lr *= cfg.lr_factor;
                since_lr_best = 0;
            }
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    let (best_val_loss, best_epoch, best_net) = best;
    info!("stopped after {} epochs; best epoch {best_epoch} (val loss {best_val_loss:.5})", epochs.len());
    let history = TrainingHistory { epochs, best_epoch, best_val_loss, n_train: train_idx.len(), n_val };
    Ok((TrainedNet { net: best_net, target_mean, target_std }, history))
}
