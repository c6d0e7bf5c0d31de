//! Loss, optimizer, training loop, and evaluation.

use crate::dataset::Dataset;
use crate::error::{KanError, Result};
use crate::mixer::KanMixerModel;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Adam hyperparameters. Defaults: lr 1e-3, betas (0.9, 0.999), eps 1e-8,
/// no weight decay, no schedule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay on a flat
/// parameter group.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    hyper: &AdamParams,
) -> Result<()> {
    if grad.len() != param.len() || m.len() != param.len() || v.len() != param.len() {
        return Err(KanError::ShapeMismatch(format!(
            "adam_step: param {} grad {} m {} v {}",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    let bc1 = 1.0 - hyper.beta1.powi(t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= hyper.lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * param[i]);
    }
    Ok(())
}

/// Optimizer state for a whole model: first/second moments per parameter
/// group, in the model's fixed parameter visit order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamParams,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(hyper: AdamParams) -> Self {
        AdamState {
            hyper,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one Adam update to every parameter of the model, consuming
    /// the gradients currently in the buffers.
    pub fn step_model(&mut self, model: &mut KanMixerModel) -> Result<()> {
        if self.moments.is_empty() {
            model.visit_params(&mut |_, p| {
                self.moments.push((vec![0.0; p.numel()], vec![0.0; p.numel()]));
            });
        }
        self.step += 1;
        let t = self.step;
        let hyper = self.hyper;
        let moments = &mut self.moments;
        let mut idx = 0;
        let mut status = Ok(());
        model.visit_params_mut(&mut |_, p| {
            if status.is_err() {
                return;
            }
            let (m, v) = &mut moments[idx];
            idx += 1;
            let Tensor { data, grad, .. } = p;
            match grad.as_deref() {
                Some(g) => status = adam_step(data, g, m, v, t, &hyper),
                None => {
                    status = Err(KanError::ShapeMismatch(
                        "parameter without gradient buffer".to_string(),
                    ))
                }
            }
        });
        status
    }
}

/// Numerically stable softmax cross entropy. Returns the batch-mean loss and
/// `d loss / d logits = (softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let (b, k) = match logits.shape.as_slice() {
        &[b, k] => (b, k),
        other => {
            return Err(KanError::ShapeMismatch(format!(
                "softmax_cross_entropy expects [B,K] logits, got {other:?}"
            )))
        }
    };
    if labels.len() != b {
        return Err(KanError::ShapeMismatch(format!(
            "{b} logit rows vs {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= k) {
        return Err(KanError::LabelOutOfRange(format!(
            "label {bad} outside 0..{k}"
        )));
    }
    let mut loss = 0.0;
    let mut d_logits = vec![0.0; b * k];
    let inv_b = 1.0 / b as f64;
    for r in 0..b {
        let row = &logits.data[r * k..(r + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let y = labels[r] as usize;
        loss += lse - row[y];
        for i in 0..k {
            let softmax = (row[i] - lse).exp();
            d_logits[r * k + i] = (softmax - if i == y { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((loss * inv_b, Tensor::from_vec(&[b, k], d_logits)?))
}

/// Index of the row maximum; ties go to the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy of the model on a dataset, plus elapsed wall time in seconds.
pub fn evaluate(model: &mut KanMixerModel, ds: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if model.config.n_output != ds.n_classes {
        return Err(KanError::ShapeMismatch(format!(
            "model has {} outputs, dataset has {} classes",
            model.config.n_output, ds.n_classes
        )));
    }
    let start = Instant::now();
    let k = ds.n_classes;
    let mut correct = 0usize;
    for (images, labels) in ds.batches(batch_size, 0, false) {
        let logits = model.forward(&images)?;
        for (r, &label) in labels.iter().enumerate() {
            if argmax(&logits.data[r * k..(r + 1) * k]) == label as usize {
                correct += 1;
            }
        }
    }
    let accuracy = correct as f64 / ds.n_samples() as f64;
    Ok((accuracy, start.elapsed().as_secs_f64()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub epoch_time_s: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub per_epoch: Vec<EpochMetrics>,
    pub test_time_s: f64,
    pub test_accuracy: f64,
    pub param_count: usize,
    /// Parameter bytes plus peak forward-cache bytes, in decimal megabytes.
    /// A CPU-side estimate standing in for device memory counters.
    pub est_memory_mb: f64,
}

impl RunMetrics {
    pub fn mean_epoch_time_s(&self) -> f64 {
        if self.per_epoch.is_empty() {
            0.0
        } else {
            self.per_epoch.iter().map(|e| e.epoch_time_s).sum::<f64>()
                / self.per_epoch.len() as f64
        }
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.per_epoch.last().map(|e| e.train_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamParams,
}

/// Per-epoch shuffle seed, decorrelated across epochs by splitmix64.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed
        .wrapping_add(1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(epoch as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Full training run: shuffled minibatches, forward, cross-entropy,
/// backward, Adam. After the last epoch, parameters are rounded through f32
/// (the checkpoint precision) and the model is evaluated on the test set.
/// Everything is deterministic given the seed; wall times are the only
/// fields that vary between runs.
pub fn train(
    model: &mut KanMixerModel,
    train_ds: &Dataset,
    test_ds: &Dataset,
    opts: &TrainOptions,
    progress: &mut dyn FnMut(&EpochMetrics),
) -> Result<RunMetrics> {
    let mut adam = AdamState::new(opts.adam);
    let mut per_epoch = Vec::with_capacity(opts.epochs);
    let mut peak_cache = 0usize;
    for epoch in 0..opts.epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (images, labels) in
            train_ds.batches(opts.batch_size, epoch_seed(opts.seed, epoch), true)
        {
            let logits = model.forward(&images)?;
            let (loss, d_logits) = softmax_cross_entropy(&logits, &labels)?;
            model.zero_grad();
            model.backward(&d_logits)?;
            adam.step_model(model)?;
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
            peak_cache = peak_cache.max(model.cached_bytes());
        }
        let report = EpochMetrics {
            epoch,
            epoch_time_s: start.elapsed().as_secs_f64(),
            train_loss: loss_sum / seen as f64,
        };
        progress(&report);
        per_epoch.push(report);
    }
    model.quantize_params_to_f32();
    let (test_accuracy, test_time_s) = evaluate(model, test_ds, opts.batch_size)?;
    let param_count = model.param_count();
    Ok(RunMetrics {
        per_epoch,
        test_time_s,
        test_accuracy,
        param_count,
        est_memory_mb: (param_count * 8 + peak_cache) as f64 / 1e6,
    })
}
