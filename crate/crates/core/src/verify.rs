//! Black-box ownership verification.
//!
//! The verifier queries `n_d` fresh triggers and measures ρ, the fraction
//! answered with the key's class. Chernoff bounds on the binomial count size
//! `n_d` and bound both error probabilities at the threshold τ.

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{MixerError, Result};
use crate::keygen::SecretKey;
use crate::rng::{StreamCursor, StreamId};
use crate::tensornet::{argmax, Classifier};
use crate::trigger::{synth_set, Role, TriggerSet};

/// How a model's answer is compared with the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// `argmax_i m(x)_i == argmax_i μ_i`
    #[default]
    Plain,
    /// `argmax_i μ_i · m(x)_i == argmax_i μ_i`
    Weighted,
}

impl std::str::FromStr for DecisionRule {
    type Err = MixerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(DecisionRule::Plain),
            "weighted" => Ok(DecisionRule::Weighted),
            other => Err(MixerError::Config(format!("unknown decision rule {other:?}"))),
        }
    }
}

/// Predicted class per trigger under `rule`, in set order.
pub fn decisions(model: &dyn Classifier, set: &TriggerSet, key: &SecretKey, rule: DecisionRule) -> Result<Vec<usize>> {
    if set.role == Role::Embed {
        return Err(MixerError::Protocol(
            "embedding triggers must not be used for measurement".into(),
        ));
    }
    if set.is_empty() {
        return Err(MixerError::Domain("empty trigger set".into()));
    }
    let probs = model.predict_proba(&set.images())?;
    Ok((0..probs.rows())
        .map(|i| match rule {
            DecisionRule::Plain => argmax(probs.row(i)),
            DecisionRule::Weighted => {
                let weighted: Vec<f64> = probs.row(i).iter().zip(&key.mu).map(|(p, m)| p * m).collect();
                argmax(&weighted)
            }
        })
        .collect())
}

/// ρ = (# triggers answered with argmax μ) / n.
pub fn compute_rho(model: &dyn Classifier, set: &TriggerSet, key: &SecretKey, rule: DecisionRule) -> Result<f64> {
    let target = key.target_class();
    let preds = decisions(model, set, key, rule)?;
    Ok(preds.iter().filter(|&&p| p == target).count() as f64 / preds.len() as f64)
}

/// `P(ρ > τ) ≤ exp(-n_d (τ - ρ_N)²)` for an unwatermarked model.
pub fn chernoff_fp_bound(tau: f64, rho_n: f64, n_d: usize) -> Result<f64> {
    if !(rho_n >= 0.0 && rho_n < tau && tau <= 1.0) {
        return Err(MixerError::Domain(format!(
            "need 0 ≤ ρ_N < τ ≤ 1, got ρ_N={rho_n}, τ={tau}"
        )));
    }
    Ok((-(n_d as f64) * (tau - rho_n).powi(2)).exp())
}

/// `P(ρ < τ) ≤ exp(-n_d (τ - ρ_P)²)` for a watermarked model.
pub fn chernoff_fn_bound(tau: f64, rho_p: f64, n_d: usize) -> Result<f64> {
    if !(tau >= 0.0 && tau < rho_p && rho_p <= 1.0) {
        return Err(MixerError::Domain(format!(
            "need 0 ≤ τ < ρ_P ≤ 1, got τ={tau}, ρ_P={rho_p}"
        )));
    }
    Ok((-(n_d as f64) * (tau - rho_p).powi(2)).exp())
}

/// Real-valued query budget `((√-ln P_fp + √-ln P_fn) / (ρ_P - ρ_N))²`.
pub fn required_samples_exact(p_fp: f64, p_fn: f64, rho_p: f64, rho_n: f64) -> Result<f64> {
    for (name, p) in [("P_fp", p_fp), ("P_fn", p_fn)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(MixerError::Domain(format!("{name} must lie in (0, 1), got {p}")));
        }
    }
    if !(0.0..=1.0).contains(&rho_n) || !(0.0..=1.0).contains(&rho_p) || rho_p <= rho_n {
        return Err(MixerError::Domain(format!(
            "need 0 ≤ ρ_N < ρ_P ≤ 1, got ρ_N={rho_n}, ρ_P={rho_p}"
        )));
    }
    Ok((((-p_fp.ln()).sqrt() + (-p_fn.ln()).sqrt()) / (rho_p - rho_n)).powi(2))
}

/// Smallest integer `n_d` for which a valid threshold exists.
pub fn required_samples(p_fp: f64, p_fn: f64, rho_p: f64, rho_n: f64) -> Result<usize> {
    Ok(required_samples_exact(p_fp, p_fn, rho_p, rho_n)?.ceil() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionParams {
    pub rho_p: f64,
    pub rho_n: f64,
    pub p_fp: f64,
    pub p_fn: f64,
    /// Midpoint of (ρ_N, ρ_P) when unset.
    pub tau: Option<f64>,
    /// From `required_samples` when unset.
    pub n_d: Option<usize>,
}

impl Default for DecisionParams {
    fn default() -> Self {
        Self {
            rho_p: 0.8,
            rho_n: 0.5,
            p_fp: 0.05,
            p_fn: 0.05,
            tau: None,
            n_d: None,
        }
    }
}

impl DecisionParams {
    /// Fills τ and n_d and checks `0 ≤ ρ_N < τ < ρ_P ≤ 1`.
    pub fn resolve(&self) -> Result<(f64, usize)> {
        let n_d = match self.n_d {
            Some(0) => return Err(MixerError::Domain("n_d must be positive".into())),
            Some(n) => n,
            None => required_samples(self.p_fp, self.p_fn, self.rho_p, self.rho_n)?,
        };
        // validates the error levels and the (ρ_N, ρ_P) ordering
        required_samples_exact(self.p_fp, self.p_fn, self.rho_p, self.rho_n)?;
        let tau = self.tau.unwrap_or((self.rho_n + self.rho_p) / 2.0);
        if !(self.rho_n < tau && tau < self.rho_p) {
            return Err(MixerError::Domain(format!(
                "τ={tau} outside (ρ_N, ρ_P) = ({}, {})",
                self.rho_n, self.rho_p
            )));
        }
        Ok((tau, n_d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Watermarked,
    NotWatermarked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub rho: f64,
    pub matches: usize,
    pub n_d: usize,
    pub tau: f64,
    pub decision: Decision,
    pub fp_bound: f64,
    pub fn_bound: f64,
    pub rule: DecisionRule,
    pub key_fingerprint: String,
    pub target_class: usize,
    pub stream: StreamId,
    /// Predicted class for each query, in synthesis order.
    pub predictions: Vec<usize>,
}

impl VerificationReport {
    pub fn verdict_line(&self) -> String {
        let verdict = match self.decision {
            Decision::Watermarked => "WATERMARKED",
            Decision::NotWatermarked => "NOT WATERMARKED",
        };
        format!(
            "{verdict}: rho={:.4} ({}/{}) tau={:.4} fp<={:.3e} fn<={:.3e} key={}",
            self.rho, self.matches, self.n_d, self.tau, self.fp_bound, self.fn_bound, self.key_fingerprint
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Synthesises a fresh verification set on the next stream of `cursor`,
/// queries the model and decides.
pub fn verify_model(
    model: &dyn Classifier,
    key: &SecretKey,
    params: &DecisionParams,
    rule: DecisionRule,
    test: &Dataset,
    cursor: &mut StreamCursor,
) -> Result<VerificationReport> {
    let (tau, n_d) = params.resolve()?;
    let stream = cursor.advance();
    let set = synth_set(key, test, n_d, Role::Verify, &stream)?;
    let predictions = decisions(model, &set, key, rule)?;
    let target = key.target_class();
    let matches = predictions.iter().filter(|&&p| p == target).count();
    let rho = matches as f64 / n_d as f64;
    Ok(VerificationReport {
        rho,
        matches,
        n_d,
        tau,
        decision: if rho > tau {
            Decision::Watermarked
        } else {
            Decision::NotWatermarked
        },
        fp_bound: chernoff_fp_bound(tau, params.rho_n, n_d)?,
        fn_bound: chernoff_fn_bound(tau, params.rho_p, n_d)?,
        rule,
        key_fingerprint: key.fingerprint(),
        target_class: target,
        stream,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_sample_size() {
        let exact = required_samples_exact(0.05, 0.05, 0.8, 0.5).unwrap();
        assert!((exact - 133.14).abs() < 0.01, "{exact}");
        assert_eq!(required_samples(0.05, 0.05, 0.8, 0.5).unwrap(), 134);
        assert_eq!(required_samples(0.05, 0.05, 0.9, 0.1).unwrap(), 19);
    }

    #[test]
    fn doubling_the_gap_quarters_the_budget() {
        let a = required_samples_exact(0.01, 0.1, 0.6, 0.5).unwrap();
        let b = required_samples_exact(0.01, 0.1, 0.7, 0.5).unwrap();
        assert!((a / b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gap_is_a_domain_error() {
        assert!(required_samples(0.05, 0.05, 0.5, 0.5).is_err());
        assert!(required_samples(0.0, 0.05, 0.8, 0.5).is_err());
    }

    #[test]
    fn chernoff_values() {
        let b = chernoff_fp_bound(0.65, 0.5, 100).unwrap();
        assert!((b - (-2.25f64).exp()).abs() < 1e-15);
        assert!((b - 0.1054).abs() < 1e-4);
        assert!(chernoff_fp_bound(0.5 + 1e-9, 0.5, 100).unwrap() > 0.999_999);
        assert!(chernoff_fp_bound(0.4, 0.5, 100).is_err());
        assert!(chernoff_fn_bound(0.9, 0.8, 100).is_err());
        let mut prev = 1.0;
        for n in [1, 10, 100, 1000] {
            let v = chernoff_fn_bound(0.65, 0.8, n).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn default_params_resolve_to_midpoint() {
        let (tau, n_d) = DecisionParams::default().resolve().unwrap();
        assert_eq!(n_d, 134);
        assert!((tau - 0.65).abs() < 1e-15);
        let bad = DecisionParams {
            tau: Some(0.9),
            ..DecisionParams::default()
        };
        assert!(bad.resolve().is_err());
    }
}
