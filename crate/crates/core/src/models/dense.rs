//! Feed-forward network with batch normalisation, ELU activations and inverted
//! dropout, with hand-written backpropagation.
//!
//! Each hidden block is `dense -> batch norm -> activation -> dropout`. When
//! batch norm is enabled the dense layer carries no bias (the batch-norm shift
//! replaces it). All trainable parameters live in one flat vector so the
//! optimizer and gradient checks work on a single buffer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Identity => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Single linear unit, trained with mean squared error.
    Regression,
    /// Single sigmoid unit, trained with binary cross-entropy.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout: f64,
    pub head: Head,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Architecture {
    /// Two hidden layers of 128 units, linear output.
    pub fn regressor(input_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden: vec![128, 128],
            activation: Activation::Elu,
            batch_norm: true,
            dropout: 0.3,
            head: Head::Regression,
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
        }
    }

    /// One hidden layer of 128 units, sigmoid output.
    pub fn classifier(input_dim: usize) -> Self {
        Architecture { hidden: vec![128], head: Head::Binary, ..Self::regressor(input_dim) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Offsets of one layer's parameters in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slots {
    in_dim: usize,
    out_dim: usize,
    weights: usize,
    bias: Option<usize>,
    gamma: Option<usize>,
    beta: Option<usize>,
}

fn layout(arch: &Architecture) -> (Vec<Slots>, usize) {
    let mut slots = Vec::with_capacity(arch.hidden.len() + 1);
    let mut off = 0;
    let mut in_dim = arch.input_dim;
    let mut push = |in_dim: usize, out_dim: usize, bn: bool| {
        let weights = off;
        off += in_dim * out_dim;
        let (bias, gamma, beta) = if bn {
            let g = off;
            off += 2 * out_dim;
            (None, Some(g), Some(g + out_dim))
        } else {
            let b = off;
            off += out_dim;
            (Some(b), None, None)
        };
        slots.push(Slots { in_dim, out_dim, weights, bias, gamma, beta });
    };
    for &h in &arch.hidden {
        push(in_dim, h, arch.batch_norm);
        in_dim = h;
    }
    push(in_dim, 1, false);
    (slots, off)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub arch: Architecture,
    pub params: Vec<f64>,
    /// One entry per hidden layer when batch norm is enabled.
    pub running: Vec<RunningStats>,
    slots: Vec<Slots>,
}

/// Per-hidden-layer dropout masks: 0 or 1/keep for every (row, unit).
pub type DropoutMasks = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout masks applied.
    Train,
    /// Running statistics, no dropout.
    Inference,
}

/// Cached intermediate values of a forward pass for backprop.
struct Trace {
    /// Input to each layer (rows x in_dim), including the output layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation after batch norm (or dense output without it).
    pre_act: Vec<Vec<f64>>,
    /// Normalised values and inverse std per hidden layer (batch norm only).
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    /// Batch means and variances (batch norm, train mode).
    batch_stats: Vec<RunningStats>,
    /// Output logits.
    logits: Vec<f64>,
}

fn matmul(x: &[f64], rows: usize, w: &[f64], in_dim: usize, out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * out_dim];
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let or = &mut out[r * out_dim..(r + 1) * out_dim];
        for (i, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[i * out_dim..(i + 1) * out_dim];
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o += xv * wv;
            }
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases, unit batch-norm scale.
    pub fn new<R: Rng>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (slots, len) = layout(&arch);
        let mut params = vec![0.0; len];
        for s in &slots {
            let limit = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
            for p in &mut params[s.weights..s.weights + s.in_dim * s.out_dim] {
                *p = rng.random_range(-limit..limit);
            }
            if let Some(g) = s.gamma {
                params[g..g + s.out_dim].iter_mut().for_each(|p| *p = 1.0);
            }
        }
        let running = if arch.batch_norm {
            arch.hidden.iter().map(|&h| RunningStats { mean: vec![0.0; h], var: vec![1.0; h] }).collect()
        } else {
            Vec::new()
        };
        Ok(DenseNet { arch, params, running, slots })
    }

    /// Rebuild from stored parameters (used by deserialisation).
    pub fn from_parts(arch: Architecture, params: Vec<f64>, running: Vec<RunningStats>) -> Result<Self> {
        arch.validate()?;
        let (slots, len) = layout(&arch);
        if params.len() != len {
            return Err(Error::Data(format!("expected {len} parameters, found {}", params.len())));
        }
        let expected_running = if arch.batch_norm { arch.hidden.len() } else { 0 };
        if running.len() != expected_running
            || running.iter().zip(&arch.hidden).any(|(r, &h)| r.mean.len() != h || r.var.len() != h)
        {
            return Err(Error::Data("running statistics do not match architecture".into()));
        }
        Ok(DenseNet { arch, params, running, slots })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn latent_dim(&self) -> usize {
        *self.arch.hidden.last().expect("validated non-empty")
    }

    /// Sample inverted-dropout masks for a batch.
    pub fn sample_masks<R: Rng>(&self, rows: usize, rng: &mut R) -> DropoutMasks {
        let keep = 1.0 - self.arch.dropout;
        self.arch
            .hidden
            .iter()
            .map(|&h| {
                (0..rows * h)
                    .map(|_| if self.arch.dropout == 0.0 || rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn forward_trace(&self, x: &[f64], rows: usize, mode: Mode, masks: Option<&DropoutMasks>, stop_after: Option<usize>) -> Trace {
        let arch = &self.arch;
        let p = &self.params;
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.slots.len()),
            pre_act: Vec::new(),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            batch_stats: Vec::new(),
            logits: Vec::new(),
        };
        let mut h = x.to_vec();
        for (l, s) in self.slots[..arch.hidden.len()].iter().enumerate() {
            let mut z = matmul(&h, rows, &p[s.weights..s.weights + s.in_dim * s.out_dim], s.in_dim, s.out_dim);
            trace.inputs.push(std::mem::take(&mut h));
            let d = s.out_dim;
            if let Some(b) = s.bias {
                for r in 0..rows {
                    for j in 0..d {
                        z[r * d + j] += p[b + j];
                    }
                }
            }
            if let (Some(g), Some(be)) = (s.gamma, s.beta) {
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mut mean = vec![0.0; d];
                        let mut var = vec![0.0; d];
                        for r in 0..rows {
                            for j in 0..d {
                                mean[j] += z[r * d + j];
                            }
                        }
                        mean.iter_mut().for_each(|m| *m /= rows as f64);
                        for r in 0..rows {
                            for j in 0..d {
                                var[j] += (z[r * d + j] - mean[j]).powi(2);
                            }
                        }
                        var.iter_mut().for_each(|v| *v /= rows as f64);
                        (mean, var)
                    }
                    Mode::Inference => (self.running[l].mean.clone(), self.running[l].var.clone()),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + arch.bn_epsilon).sqrt()).collect();
                let mut xhat = vec![0.0; rows * d];
                for r in 0..rows {
                    for j in 0..d {
                        let k = r * d + j;
                        xhat[k] = (z[k] - mean[j]) * inv_std[j];
                        z[k] = p[g + j] * xhat[k] + p[be + j];
                    }
                }
                trace.xhat.push(xhat);
                trace.inv_std.push(inv_std);
                trace.batch_stats.push(RunningStats { mean, var });
            }
            let mut a: Vec<f64> = z.iter().map(|&u| arch.activation.apply(u)).collect();
            trace.pre_act.push(z);
            if stop_after == Some(l) {
                trace.inputs.push(a);
                return trace;
            }
            if mode == Mode::Train {
                if let Some(m) = masks {
                    a.iter_mut().zip(&m[l]).for_each(|(v, k)| *v *= k);
                }
            }
            h = a;
        }
        let s = self.slots[arch.hidden.len()];
        let mut logits = matmul(&h, rows, &p[s.weights..s.weights + s.in_dim], s.in_dim, 1);
        let b = p[s.bias.expect("output layer has a bias")];
        logits.iter_mut().for_each(|v| *v += b);
        trace.inputs.push(h);
        trace.logits = logits;
        trace
    }

    fn head_output(&self, logit: f64) -> f64 {
        match self.arch.head {
            Head::Regression => logit,
            Head::Binary => sigmoid(logit),
        }
    }

    /// Inference-mode outputs for `rows` flattened inputs.
    pub fn predict(&self, x: &[f64], rows: usize) -> Vec<f64> {
        self.forward_trace(x, rows, Mode::Inference, None, None).logits.iter().map(|&z| self.head_output(z)).collect()
    }

    /// Outputs under an explicit mode and masks, without touching running
    /// statistics.
    pub fn forward(&self, x: &[f64], rows: usize, mode: Mode, masks: Option<&DropoutMasks>) -> Vec<f64> {
        self.forward_trace(x, rows, mode, masks, None).logits.iter().map(|&z| self.head_output(z)).collect()
    }

    /// Inference-mode activations of the last hidden layer (rows x width).
    pub fn penultimate(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let last = self.arch.hidden.len() - 1;
        let mut t = self.forward_trace(x, rows, Mode::Inference, None, Some(last));
        t.inputs.pop().expect("activations recorded")
    }

    /// Inference-mode pre-activations (after batch norm) of every hidden layer.
    pub fn hidden_pre_activations(&self, x: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let last = self.arch.hidden.len() - 1;
        self.forward_trace(x, rows, Mode::Inference, None, Some(last)).pre_act
    }

    /// Training-mode dense outputs before batch norm for every hidden layer.
    fn batch_means(&self, trace: &Trace) -> Vec<RunningStats> {
        trace.batch_stats.clone()
    }

    /// Loss for targets `y`. Regression uses mean squared error; the binary
    /// head uses cross-entropy on logits.
    fn loss_from_logits(&self, logits: &[f64], y: &[f64]) -> f64 {
        let n = y.len() as f64;
        match self.arch.head {
            Head::Regression => logits.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n,
            Head::Binary => logits.iter().zip(y).map(|(z, t)| softplus(*z) - t * z).sum::<f64>() / n,
        }
    }

    /// Loss only, under a given mode.
    pub fn loss(&self, x: &[f64], y: &[f64], mode: Mode, masks: Option<&DropoutMasks>) -> f64 {
        let t = self.forward_trace(x, y.len(), mode, masks, None);
        self.loss_from_logits(&t.logits, y)
    }

    /// Training-mode loss and analytic gradient of every parameter for a
    /// batch, with the given dropout masks. Pure: running statistics are not
    /// updated.
    pub fn loss_and_gradients(&self, x: &[f64], y: &[f64], masks: Option<&DropoutMasks>) -> (f64, Vec<f64>) {
        let (loss, grad, _) = self.loss_grad_trace(x, y, masks);
        (loss, grad)
    }

    fn loss_grad_trace(&self, x: &[f64], y: &[f64], masks: Option<&DropoutMasks>) -> (f64, Vec<f64>, Vec<RunningStats>) {
        let rows = y.len();
        let arch = &self.arch;
        let p = &self.params;
        let t = self.forward_trace(x, rows, Mode::Train, masks, None);
        let loss = self.loss_from_logits(&t.logits, y);
        let mut grad = vec![0.0; p.len()];
        let n = rows as f64;

        // d loss / d logit
        let mut delta: Vec<f64> = match arch.head {
            Head::Regression => t.logits.iter().zip(y).map(|(z, t)| 2.0 * (z - t) / n).collect(),
            Head::Binary => t.logits.iter().zip(y).map(|(z, t)| (sigmoid(*z) - t) / n).collect(),
        };

        let n_hidden = arch.hidden.len();
        for l in (0..=n_hidden).rev() {
            let s = self.slots[l];
            let (din, dout) = (s.in_dim, s.out_dim);
            let input = &t.inputs[l];
            // delta is d loss / d (layer output before batch norm / activation)
            if l < n_hidden {
                // delta currently holds d loss / d (activation output after dropout)
                let pre = &t.pre_act[l];
                for r in 0..rows {
                    for j in 0..dout {
                        let k = r * dout + j;
                        let m = masks.map_or(1.0, |m| m[l][k]);
                        delta[k] *= m * arch.activation.derivative(pre[k]);
                    }
                }
                if let (Some(g), Some(be)) = (s.gamma, s.beta) {
                    let xhat = &t.xhat[l];
                    let inv_std = &t.inv_std[l];
                    let mut sum_dxhat = vec![0.0; dout];
                    let mut sum_dxhat_xhat = vec![0.0; dout];
                    for r in 0..rows {
                        for j in 0..dout {
                            let k = r * dout + j;
                            grad[g + j] += delta[k] * xhat[k];
                            grad[be + j] += delta[k];
                            let dxh = delta[k] * p[g + j];
                            sum_dxhat[j] += dxh;
                            sum_dxhat_xhat[j] += dxh * xhat[k];
                        }
                    }
                    for r in 0..rows {
                        for j in 0..dout {
                            let k = r * dout + j;
                            let dxh = delta[k] * p[g + j];
                            delta[k] = inv_std[j] / n * (n * dxh - sum_dxhat[j] - xhat[k] * sum_dxhat_xhat[j]);
                        }
                    }
                }
            }
            if let Some(b) = s.bias {
                for r in 0..rows {
                    for j in 0..dout {
                        grad[b + j] += delta[r * dout + j];
                    }
                }
            }
            let w = s.weights;
            for r in 0..rows {
                let xr = &input[r * din..(r + 1) * din];
                let dr = &delta[r * dout..(r + 1) * dout];
                for (i, &xv) in xr.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let gw = &mut grad[w + i * dout..w + (i + 1) * dout];
                    for (gv, &dv) in gw.iter_mut().zip(dr) {
                        *gv += xv * dv;
                    }
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; rows * din];
                for r in 0..rows {
                    let dr = &delta[r * dout..(r + 1) * dout];
                    for i in 0..din {
                        let wr = &p[w + i * dout..w + (i + 1) * dout];
                        prev[r * din + i] = wr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    }
                }
                delta = prev;
            }
        }
        let stats = self.batch_means(&t);
        (loss, grad, stats)
    }

    /// One training step's loss, gradients and running-statistics update.
    pub fn train_step_gradients(&mut self, x: &[f64], y: &[f64], masks: Option<&DropoutMasks>) -> (f64, Vec<f64>) {
        let (loss, grad, stats) = self.loss_grad_trace(x, y, masks);
        let mom = self.arch.bn_momentum;
        for (run, batch) in self.running.iter_mut().zip(&stats) {
            for j in 0..run.mean.len() {
                run.mean[j] = mom * run.mean[j] + (1.0 - mom) * batch.mean[j];
                run.var[j] = mom * run.var[j] + (1.0 - mom) * batch.var[j];
            }
        }
        (loss, grad)
    }

    /// Structured view of the parameters for serialisation.
    pub fn layers(&self) -> Vec<LayerParams> {
        self.slots
            .iter()
            .enumerate()
            .map(|(l, s)| {
                let slice = |o: Option<usize>, len: usize| o.map(|o| self.params[o..o + len].to_vec());
                let weights = (0..s.in_dim)
                    .map(|i| self.params[s.weights + i * s.out_dim..s.weights + (i + 1) * s.out_dim].to_vec())
                    .collect();
                LayerParams {
                    in_dim: s.in_dim,
                    out_dim: s.out_dim,
                    weights,
                    bias: slice(s.bias, s.out_dim),
                    gamma: slice(s.gamma, s.out_dim),
                    beta: slice(s.beta, s.out_dim),
                    running_mean: s.gamma.map(|_| self.running[l].mean.clone()),
                    running_var: s.gamma.map(|_| self.running[l].var.clone()),
                }
            })
            .collect()
    }

    pub fn from_layers(arch: Architecture, layers: &[LayerParams]) -> Result<Self> {
        let (slots, len) = layout(&arch);
        if layers.len() != slots.len() {
            return Err(Error::Data(format!("expected {} layers, found {}", slots.len(), layers.len())));
        }
        let mut params = vec![0.0; len];
        let mut running = Vec::new();
        for (s, lp) in slots.iter().zip(layers) {
            if lp.in_dim != s.in_dim || lp.out_dim != s.out_dim || lp.weights.len() != s.in_dim {
                return Err(Error::Data("layer shape does not match architecture".into()));
            }
            for (i, row) in lp.weights.iter().enumerate() {
                if row.len() != s.out_dim {
                    return Err(Error::Data("weight row has wrong width".into()));
                }
                params[s.weights + i * s.out_dim..s.weights + (i + 1) * s.out_dim].copy_from_slice(row);
            }
            let mut put = |slot: Option<usize>, values: &Option<Vec<f64>>, what: &str| -> Result<()> {
                match (slot, values) {
                    (Some(o), Some(v)) if v.len() == s.out_dim => {
                        params[o..o + s.out_dim].copy_from_slice(v);
                        Ok(())
                    }
                    (None, None) => Ok(()),
                    _ => Err(Error::Data(format!("layer {what} does not match architecture"))),
                }
            };
            put(s.bias, &lp.bias, "bias")?;
            put(s.gamma, &lp.gamma, "gamma")?;
            put(s.beta, &lp.beta, "beta")?;
            if s.gamma.is_some() {
                match (&lp.running_mean, &lp.running_var) {
                    (Some(m), Some(v)) => running.push(RunningStats { mean: m.clone(), var: v.clone() }),
                    _ => return Err(Error::Data("missing batch-norm running statistics".into())),
                }
            }
        }
        Self::from_parts(arch, params, running)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
            && self.running.iter().all(|r| r.mean.iter().chain(&r.var).all(|v| v.is_finite()))
    }
}

/// One layer as stored in a model file. `weights[i][j]` connects input `i`
/// to unit `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bias: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub running_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub running_var: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredNet {
    pub architecture: Architecture,
    pub layers: Vec<LayerParams>,
}

impl From<&DenseNet> for StoredNet {
    fn from(net: &DenseNet) -> Self {
        StoredNet { architecture: net.arch.clone(), layers: net.layers() }
    }
}

impl TryFrom<StoredNet> for DenseNet {
    type Error = Error;

    fn try_from(s: StoredNet) -> Result<Self> {
        DenseNet::from_layers(s.architecture, &s.layers)
    }
}

impl Serialize for DenseNet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        StoredNet::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DenseNet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let stored = StoredNet::deserialize(deserializer)?;
        DenseNet::try_from(stored).map_err(serde::de::Error::custom)
    }
}
