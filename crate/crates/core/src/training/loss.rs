//! Pointwise and group-contrastive objectives with their score gradients.

use crate::error::{Error, Result};

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Binary cross-entropy on a logit, returning `(loss, ∂loss/∂s)`.
///
/// `loss = softplus(s) − label·s`, which equals `−ln σ(s)` for positives and
/// `−ln(1 − σ(s))` for negatives.
pub fn vanilla_bce_loss(s: f64, label: bool) -> (f64, f64) {
    let y = if label { 1.0 } else { 0.0 };
    (softplus(s) - y * s, sigmoid(s) - y)
}

/// Softmax cross-entropy of one group, returning `(loss, ∂loss/∂scores)`.
///
/// `loss = −ln(exp(s⁺) / Σᵢ exp(sᵢ))`, evaluated with the group maximum
/// factored out; the gradient is `softmax(scores) − onehot(positive)`.
pub fn lce_group_loss(scores: &[f64], positive_index: usize) -> Result<(f64, Vec<f64>)> {
    if positive_index >= scores.len() {
        return Err(Error::PositiveOutOfRange {
            index: positive_index,
            size: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteFeature(i));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    // sum >= 1 because the maximum contributes exp(0), so both terms are >= 0.
    let loss = (max - scores[positive_index]) + sum.ln();
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[positive_index] -= 1.0;
    Ok((loss, grad))
}

/// Mean of per-group losses over the queries of a batch.
pub fn lce_batch_loss(group_losses: &[f64]) -> Result<f64> {
    if group_losses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(group_losses.iter().sum::<f64>() / group_losses.len() as f64)
}
