//! Watermark secret: mixing weights λ (images) and μ (labels), each drawn
//! from a Dirichlet over the profile's support followed by a uniform random
//! permutation of all class positions, plus a constant visible overlay.

use std::path::Path;

use base64::Engine;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MixerError, Result};
use crate::rng::StreamId;
use crate::tensornet::{argmax, Tensor};

pub const KEY_FILE_VERSION: u32 = 1;
/// Support size used when none is given.
pub const DEFAULT_SUPPORT_SIZE: usize = 2;

/// Dirichlet profile α over `C` classes. Zero entries are structural zeros,
/// not Dirichlet parameters; the number of positive entries is the support
/// size `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyProfile {
    pub alpha: Vec<f64>,
    pub seed: u64,
}

impl KeyProfile {
    pub fn new(alpha: Vec<f64>, seed: u64) -> Result<Self> {
        let p = Self { alpha, seed };
        p.validate()?;
        Ok(p)
    }

    /// α with `m` leading ones and `C - m` zeros: uniform Dirichlet on an
    /// `m`-class support.
    pub fn uniform(classes: usize, support_size: usize, seed: u64) -> Result<Self> {
        let alpha = (0..classes).map(|i| if i < support_size { 1.0 } else { 0.0 }).collect();
        Self::new(alpha, seed)
    }

    pub fn classes(&self) -> usize {
        self.alpha.len()
    }

    pub fn support_size(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0.0).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() < 2 {
            return Err(MixerError::Config("a key profile needs at least two classes".into()));
        }
        if self.alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(MixerError::Config(
                "profile entries must be finite and non-negative".into(),
            ));
        }
        if self.support_size() == 0 {
            return Err(MixerError::Config(
                "profile must have at least one positive entry".into(),
            ));
        }
        Ok(())
    }

    /// The same profile with a different seed (a usurper's fake-key profile).
    pub fn reseeded(&self, seed: u64) -> Self {
        Self {
            alpha: self.alpha.clone(),
            seed,
        }
    }
}

/// Draws the Dirichlet vector on the profile's support, zeros elsewhere,
/// before any permutation.
pub fn sample_profile_vector<R: Rng + ?Sized>(profile: &KeyProfile, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = profile
            .alpha
            .iter()
            .map(|&a| {
                if a > 0.0 {
                    Gamma::new(a, 1.0).expect("positive shape").sample(rng)
                } else {
                    0.0
                }
            })
            .collect();
        let sum: f64 = v.iter().sum();
        // an underflowed gamma draw would shrink the support; draw again
        if sum > 0.0 && v.iter().zip(&profile.alpha).all(|(x, a)| (*a > 0.0) == (*x > 0.0)) {
            v.iter_mut().for_each(|x| *x /= sum);
            return v;
        }
    }
}

/// One key vector: Dirichlet draw on the support, then a uniformly random
/// permutation of all `C` positions.
pub fn sample_weight_vector<R: Rng + ?Sized>(profile: &KeyProfile, rng: &mut R) -> Vec<f64> {
    let v = sample_profile_vector(profile, rng);
    let mut perm: Vec<usize> = (0..v.len()).collect();
    perm.shuffle(rng);
    let mut out = vec![0.0; v.len()];
    for (i, &p) in perm.iter().enumerate() {
        out[p] = v[i];
    }
    out
}

/// Constant overlay: a white filled disk of radius `⌈min(H, W) / 8⌉`
/// centred at `(r + 1, r + 1)`, replicated across channels.
pub fn make_overlay(image_shape: &[usize]) -> Result<Tensor> {
    if image_shape.len() != 3 || image_shape[0] < 8 || image_shape[1] < 8 || image_shape[2] == 0 {
        return Err(MixerError::Config(format!(
            "overlay needs an H×W×C shape with H, W ≥ 8, got {image_shape:?}"
        )));
    }
    let (h, w, c) = (image_shape[0], image_shape[1], image_shape[2]);
    let r = h.min(w).div_ceil(8);
    let centre = (r + 1) as isize;
    let r2 = (r * r) as isize;
    let mut data = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let dy = y as isize - centre;
            let dx = x as isize - centre;
            if dy * dy + dx * dx <= r2 {
                data[(y * w + x) * c..(y * w + x + 1) * c].fill(1.0);
            }
        }
    }
    Tensor::new(image_shape.to_vec(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey {
    pub classes: usize,
    pub support_size: usize,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// `H × W × channels`, values in [0, 1].
    pub overlay: Tensor,
    pub master_seed: u64,
    /// Unix seconds; set by whoever writes the key file.
    pub created: Option<u64>,
}

fn check_simplex(name: &str, v: &[f64], support: usize) -> Result<()> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(MixerError::Data(format!("{name} has a negative or non-finite entry")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(MixerError::Data(format!("{name} sums to {sum}")));
    }
    let nz = v.iter().filter(|&&x| x > 0.0).count();
    if nz != support {
        return Err(MixerError::Data(format!(
            "{name} has {nz} non-zero entries, expected {support}"
        )));
    }
    Ok(())
}

fn unique_argmax(v: &[f64]) -> bool {
    let best = v[argmax(v)];
    v.iter().filter(|&&x| x == best).count() == 1
}

impl SecretKey {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.len() != self.classes || self.mu.len() != self.classes || self.alpha.len() != self.classes {
            return Err(MixerError::Data("key vectors disagree with the class count".into()));
        }
        check_simplex("lambda", &self.lambda, self.support_size)?;
        check_simplex("mu", &self.mu, self.support_size)?;
        if !unique_argmax(&self.mu) {
            return Err(MixerError::Data("argmax of mu is not unique".into()));
        }
        if self.overlay.shape().len() != 3 || self.overlay.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MixerError::Data("overlay must be an H×W×C image in [0, 1]".into()));
        }
        Ok(())
    }

    /// The class a watermarked model should answer on triggers.
    pub fn target_class(&self) -> usize {
        argmax(&self.mu)
    }

    pub fn image_shape(&self) -> &[usize] {
        self.overlay.shape()
    }

    /// Short hex digest of (λ, μ, overlay).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in self.lambda.iter().chain(&self.mu) {
            h.update(v.to_le_bytes());
        }
        for v in self.overlay.data() {
            h.update(v.to_le_bytes());
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Draws λ and μ on two independent sub-streams of the profile seed and
/// attaches the standard overlay. Ties for the largest μ entry are redrawn.
pub fn generate_key(profile: &KeyProfile, image_shape: &[usize]) -> Result<SecretKey> {
    profile.validate()?;
    let overlay = make_overlay(image_shape)?;
    let lambda = sample_weight_vector(profile, &mut StreamId::new(profile.seed, "keygen/lambda").rng());
    let mut mu_rng = StreamId::new(profile.seed, "keygen/mu").rng();
    let mu = loop {
        let mu = sample_weight_vector(profile, &mut mu_rng);
        if unique_argmax(&mu) {
            break mu;
        }
    };
    let key = SecretKey {
        classes: profile.classes(),
        support_size: profile.support_size(),
        alpha: profile.alpha.clone(),
        lambda,
        mu,
        overlay,
        master_seed: profile.seed,
        created: None,
    };
    key.validate()?;
    Ok(key)
}

#[derive(Debug, Serialize, Deserialize)]
struct OverlayRecord {
    shape: Vec<usize>,
    /// base64 of the u8-quantised pixels
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
struct KeyFile {
    version: u32,
    #[serde(rename = "C")]
    classes: usize,
    m: usize,
    alpha: Vec<f64>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
    overlay: OverlayRecord,
    master_seed: u64,
    created: Option<u64>,
}

pub fn key_to_json(key: &SecretKey) -> Result<String> {
    let bytes: Vec<u8> = key
        .overlay
        .data()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let file = KeyFile {
        version: KEY_FILE_VERSION,
        classes: key.classes,
        m: key.support_size,
        alpha: key.alpha.clone(),
        lambda: key.lambda.clone(),
        mu: key.mu.clone(),
        overlay: OverlayRecord {
            shape: key.overlay.shape().to_vec(),
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        },
        master_seed: key.master_seed,
        created: key.created,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn key_from_json(text: &str) -> Result<SecretKey> {
    let file: KeyFile = serde_json::from_str(text)?;
    if file.version != KEY_FILE_VERSION {
        return Err(MixerError::Format(format!(
            "unsupported key file version {}",
            file.version
        )));
    }
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(file.overlay.data.as_bytes())
        .map_err(|e| MixerError::Format(format!("overlay is not valid base64: {e}")))?;
    let overlay = Tensor::new(
        file.overlay.shape,
        bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .map_err(|_| MixerError::Format("overlay size does not match its shape".into()))?;
    let key = SecretKey {
        classes: file.classes,
        support_size: file.m,
        alpha: file.alpha,
        lambda: file.lambda,
        mu: file.mu,
        overlay,
        master_seed: file.master_seed,
        created: file.created,
    };
    key.validate()?;
    Ok(key)
}

pub fn save_key(key: &SecretKey, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, key_to_json(key)?)?;
    Ok(())
}

pub fn load_key(path: impl AsRef<Path>) -> Result<SecretKey> {
    key_from_json(&std::fs::read_to_string(path)?)
}

/// True when other users may read the file.
#[cfg(unix)]
pub fn is_world_readable(path: impl AsRef<Path>) -> Result<bool> {
    use std::os::unix::fs::PermissionsExt;
    Ok(std::fs::metadata(path)?.permissions().mode() & 0o004 != 0)
}

#[cfg(not(unix))]
pub fn is_world_readable(_path: impl AsRef<Path>) -> Result<bool> {
    Ok(false)
}
