use super::tensor::{sc, Scalar, Tensor};
use super::NnError;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// `-w·(y·ln p + (1-y)·ln(1-p))` with `p` clamped.
pub fn weighted_bce(p: f64, y: f64, w: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Batch loss `(1/B)·Σ wᵢ·bce(pᵢ, yᵢ)` and its gradient with respect to the
/// probabilities. The gradient is zero where the clamp is active.
pub fn weighted_bce_batch<T: Scalar>(
    probs: &Tensor<T>,
    targets: &[f64],
    weights: &[f64],
) -> Result<(f64, Tensor<T>), NnError> {
    let b = targets.len();
    if probs.len() != b || weights.len() != b || b == 0 {
        return Err(NnError::Shape(format!(
            "{} predictions for {} targets and {} weights",
            probs.len(),
            b,
            weights.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(probs.shape());
    for (i, ((&pt, &y), &w)) in probs.data().iter().zip(targets).zip(weights).enumerate() {
        let p = pt.to_f64().unwrap();
        if !p.is_finite() {
            return Err(NnError::NonFinite(format!("prediction {i} is {p}")));
        }
        loss += weighted_bce(p, y, w);
        if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
            grad.data_mut()[i] = sc(-w * (y / p - (1.0 - y) / (1.0 - p)) / b as f64);
        }
    }
    Ok((loss / b as f64, grad))
}
