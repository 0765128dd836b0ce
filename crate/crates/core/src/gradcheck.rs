//! Central finite-difference check of [`loss_and_gradients`] in f64.

use crate::datagen::ImageSample;
use crate::error::Result;
use crate::model::{loss_and_gradients, ModelParams, Objective};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor: entries below it are compared on an absolute scale,
/// where the difference quotient is dominated by roundoff.
pub const FLOOR: f64 = 1e-5;

/// Worst relative error per parameter tensor, probing up to `per_tensor`
/// evenly spread entries of each. Attention tensors are skipped for a
/// global-only model.
pub fn worst_relative_errors(
    params: &ModelParams<f64>,
    batch: &[&ImageSample],
    pairs: Option<usize>,
    objective: &Objective,
    per_tensor: usize,
) -> Result<Vec<(String, f64)>> {
    let total = |p: &ModelParams<f64>| -> Result<f64> { Ok(loss_and_gradients(p, batch, pairs, objective)?.losses.total()) };
    let analytic = loss_and_gradients(params, batch, pairs, objective)?.grads;
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut worst = Vec::new();
    for (t, name) in names.iter().enumerate() {
        if !params.oan && name.starts_with("attention.") {
            continue;
        }
        let len = params.tensors()[t].1.data.len();
        let stride = (len / per_tensor.max(1)).max(1);
        let mut err: f64 = 0.0;
        for j in (0..len).step_by(stride) {
            let mut plus = params.clone();
            plus.tensors_mut()[t].1.data[j] += STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[t].1.data[j] -= STEP;
            let numeric = (total(&plus)? - total(&minus)?) / (2.0 * STEP);
            let a = analytic.tensors()[t].1.data[j];
            err = err.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR));
        }
        worst.push((name.clone(), err));
    }
    Ok(worst)
}
