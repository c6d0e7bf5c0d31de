//! Whole-model gradient verification against central finite differences.
//!
//! Every parameter slot is perturbed by +/- h and the loss difference is
//! compared with the analytic gradient from the backward pass. Comparisons
//! use a relative error with an absolute floor, so slots whose gradients sit
//! at the finite-difference noise floor do not produce spurious failures.

use crate::error::Result;
use crate::mixer::{KanMixerModel, MixerConfig};
use crate::tensor::Tensor;
use crate::training::softmax_cross_entropy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Name of the parameter group containing the worst slot.
    pub worst_param: String,
    /// Max relative error per parameter group, in visit order.
    pub per_param: Vec<(String, f64)>,
    pub tolerance: f64,
    pub passed: bool,
    pub param_count: usize,
}

fn batch_loss(model: &mut KanMixerModel, x: &Tensor, labels: &[u8]) -> Result<f64> {
    let logits = model.forward(x)?;
    Ok(softmax_cross_entropy(&logits, labels)?.0)
}

/// Analytic gradients for one batch, grouped by parameter name.
pub fn collect_analytic(
    model: &mut KanMixerModel,
    x: &Tensor,
    labels: &[u8],
) -> Result<Vec<(String, Vec<f64>)>> {
    let logits = model.forward(x)?;
    let (_, d_logits) = softmax_cross_entropy(&logits, labels)?;
    model.zero_grad();
    model.backward(&d_logits)?;
    let mut groups = Vec::new();
    model.visit_params(&mut |name, t| groups.push((name.to_string(), t.grad().to_vec())));
    Ok(groups)
}

/// Central finite differences of the batch loss for every parameter slot.
pub fn collect_numeric(
    model: &mut KanMixerModel,
    x: &Tensor,
    labels: &[u8],
    h: f64,
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut shapes = Vec::new();
    model.visit_params(&mut |name, t| shapes.push((name.to_string(), t.numel())));

    let mut groups = Vec::with_capacity(shapes.len());
    for (group_idx, (name, len)) in shapes.iter().enumerate() {
        let mut grad = vec![0.0; *len];
        for slot in 0..*len {
            nudge(model, group_idx, slot, h);
            let loss_plus = batch_loss(model, x, labels)?;
            nudge(model, group_idx, slot, -2.0 * h);
            let loss_minus = batch_loss(model, x, labels)?;
            nudge(model, group_idx, slot, h);
            grad[slot] = (loss_plus - loss_minus) / (2.0 * h);
        }
        groups.push((name.clone(), grad));
    }
    Ok(groups)
}

fn nudge(model: &mut KanMixerModel, group_idx: usize, slot: usize, delta: f64) {
    let mut idx = 0;
    model.visit_params_mut(&mut |_, t| {
        if idx == group_idx {
            t.data[slot] += delta;
        }
        idx += 1;
    });
}

/// Compares grouped analytic and numeric gradients slot by slot.
pub fn compare_gradients(
    analytic: &[(String, Vec<f64>)],
    numeric: &[(String, Vec<f64>)],
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len(), "group count mismatch");
    let mut per_param = Vec::with_capacity(analytic.len());
    let mut max_rel_err = 0.0;
    let mut worst_param = String::new();
    let mut param_count = 0;
    for ((name, a_group), (_, n_group)) in analytic.iter().zip(numeric) {
        let mut group_max = 0.0f64;
        param_count += a_group.len();
        for (&a, &n) in a_group.iter().zip(n_group) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
            group_max = group_max.max(rel);
        }
        if group_max > max_rel_err {
            max_rel_err = group_max;
            worst_param = name.clone();
        }
        per_param.push((name.clone(), group_max));
    }
    GradCheckReport {
        max_rel_err,
        worst_param,
        per_param,
        tolerance,
        passed: max_rel_err < tolerance,
        param_count,
    }
}

/// Builds a model from `config`, draws one random batch, and verifies every
/// parameter gradient against central finite differences (step [`FD_STEP`]).
pub fn grad_check_full(config: &MixerConfig, tolerance: f64) -> Result<GradCheckReport> {
    let mut model = KanMixerModel::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xC0FFEE));
    let batch = 2;
    let numel = batch * config.in_channels * config.image_h * config.image_w;
    let x = Tensor::from_vec(
        &[batch, config.in_channels, config.image_h, config.image_w],
        (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let labels: Vec<u8> = (0..batch)
        .map(|_| rng.random_range(0..config.n_output as u8))
        .collect();

    let analytic = collect_analytic(&mut model, &x, &labels)?;
    let numeric = collect_numeric(&mut model, &x, &labels, FD_STEP)?;
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}
