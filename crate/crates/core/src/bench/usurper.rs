use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{MixerError, Result};
use crate::keygen::{generate_key, KeyProfile, SecretKey};
use crate::rng::StreamId;
use crate::tensornet::Classifier;
use crate::trigger::{synth_set, Role};
use crate::verify::{compute_rho, DecisionRule};

/// z for a two-sided 99% normal interval.
const Z99: f64 = 2.575_829_303_548_901;

/// An adversary who knows the support size, the Dirichlet profile and the
/// overlay, but not the key itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsurperModel {
    pub alpha: Vec<f64>,
    pub overlay_shape: Vec<usize>,
    pub n_keys: usize,
    pub n_per_key: usize,
    /// Decision threshold for the exceedance column.
    pub tau: f64,
}

impl UsurperModel {
    /// Full-knowledge grant derived from the real key.
    pub fn from_key(key: &SecretKey) -> Self {
        Self {
            alpha: key.alpha.clone(),
            overlay_shape: key.image_shape().to_vec(),
            n_keys: 1000,
            n_per_key: 100,
            tau: 0.65,
        }
    }

    /// Fake key `i`: same generator, independent seed, the granted overlay.
    pub fn fake_key(&self, stream: &StreamId, i: usize) -> Result<SecretKey> {
        let seed: u64 = stream.child(i).rng().gen();
        generate_key(&KeyProfile::new(self.alpha.clone(), seed)?, &self.overlay_shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsurperReport {
    /// Mean over fake keys of `100·ρ`.
    pub rate: f64,
    /// Half-width (points) of the 99% interval for a re-run of the
    /// estimate with fresh keys; the standard error comes from the
    /// spread of per-key ρ (binomial when queries are independent).
    pub half_width: f64,
    /// Fake keys whose ρ exceeds τ.
    pub exceedances: usize,
    pub n_keys: usize,
    pub n_per_key: usize,
    pub per_key: Vec<f64>,
}

/// Mean recovery the model grants to random fake keys, each scored with
/// its own μ on triggers mixed with its own λ from `pool`.
pub fn usurper_success_rate(
    model: &dyn Classifier,
    usurper: &UsurperModel,
    pool: &Dataset,
    stream: &StreamId,
) -> Result<UsurperReport> {
    if usurper.n_keys < 2 || usurper.n_per_key == 0 {
        return Err(MixerError::Config(
            "usurper needs at least two keys and one query per key".into(),
        ));
    }
    let mut per_key = Vec::with_capacity(usurper.n_keys);
    for i in 0..usurper.n_keys {
        let fake = usurper.fake_key(stream, i)?;
        let set = synth_set(
            &fake,
            pool,
            usurper.n_per_key,
            Role::Measure,
            &stream.child(format!("queries{i}")),
        )?;
        per_key.push(compute_rho(model, &set, &fake, DecisionRule::Plain)?);
    }
    let n = per_key.len() as f64;
    let mean = per_key.iter().sum::<f64>() / n;
    let var = per_key.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Ok(UsurperReport {
        rate: 100.0 * mean,
        half_width: 100.0 * Z99 * std::f64::consts::SQRT_2 * se,
        exceedances: per_key.iter().filter(|&&r| r > usurper.tau).count(),
        n_keys: usurper.n_keys,
        n_per_key: usurper.n_per_key,
        per_key,
    })
}
