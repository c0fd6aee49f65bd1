use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{Dataset, Partition};
use crate::error::{MixerError, Result};
use crate::tensornet::Tensor;

pub const BLOB_NOISE_SIGMA: f64 = 0.1;

/// Noise-free template of class `class`: a Gaussian bump whose centre sits on
/// a ring around the image centre, one angle per class.
pub fn blob_template(class: usize, classes: usize, h: usize, w: usize) -> Vec<f64> {
    let side = h.min(w) as f64;
    let ring = 0.3 * side;
    let width = side / 10.0;
    let angle = 2.0 * PI * class as f64 / classes as f64;
    let cy = (h as f64 - 1.0) / 2.0 + ring * angle.sin();
    let cx = (w as f64 - 1.0) / 2.0 + ring * angle.cos();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            out.push((-d2 / (2.0 * width * width)).exp());
        }
    }
    out
}

/// Desk-scale stand-in corpus: `per_class` noisy copies of each class
/// template (σ = 0.1 Gaussian pixel noise, clipped to [0, 1]), stored class
/// by class.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    h: usize,
    w: usize,
    channels: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || per_class == 0 || h < 4 || w < 4 || channels == 0 {
        return Err(MixerError::Config(format!(
            "synth_blobs needs C ≥ 2, per_class ≥ 1 and images of at least 4×4, got C={classes}, \
             per_class={per_class}, {h}×{w}×{channels}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, BLOB_NOISE_SIGMA).expect("valid sigma");
    let mut data = Vec::with_capacity(classes * per_class * h * w * channels);
    let mut labels = Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        let template = blob_template(class, classes, h, w);
        for _ in 0..per_class {
            for &t in &template {
                for _ in 0..channels {
                    data.push((t + noise.sample(&mut rng)).clamp(0.0, 1.0));
                }
            }
            labels.push(class);
        }
    }
    let images = Tensor::new(vec![classes * per_class, h, w, channels], data)?;
    Dataset::new(
        format!("blobs{classes}x{per_class}"),
        images,
        labels,
        classes,
        Partition::Full,
    )
}
