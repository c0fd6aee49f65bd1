use crate::error::{MixerError, Result};

/// Floor applied to predicted probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy `-Σ t_i log p_i` against a soft target distribution.
pub fn cross_entropy_soft(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(MixerError::InputShape {
            expected: vec![target.len()],
            actual: vec![pred.len()],
        });
    }
    for (name, v) in [("prediction", pred), ("target", target)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(MixerError::Domain(format!("{name} sums to {sum}, not 1")));
        }
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| if *t == 0.0 { 0.0 } else { -t * p.max(PROB_FLOOR).ln() })
        .sum())
}
