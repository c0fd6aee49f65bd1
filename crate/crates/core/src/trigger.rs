//! Mixup trigger synthesis.
//!
//! A trigger blends one random exemplar of every class in λ's support with
//! the key weights, adds the overlay and clips to [0, 1]. Its soft label is
//! `Σ μ_i e_i`, which is μ itself.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Partition};
use crate::error::{MixerError, Result};
use crate::keygen::SecretKey;
use crate::rng::StreamId;
use crate::tensornet::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Injected into training (the embedding set).
    Embed,
    /// Queried by a verifier; built from the held-out test split only.
    Verify,
    /// Used for recovery measurements.
    Measure,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Embed => "embed",
            Role::Verify => "verify",
            Role::Measure => "measure",
        }
    }

    fn accepts(self, partition: Partition) -> bool {
        match self {
            Role::Embed => partition == Partition::Train,
            Role::Verify => partition == Partition::Test,
            Role::Measure => matches!(partition, Partition::Train | Partition::Validation | Partition::Test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub pool: Partition,
    /// Source image index for each class in λ's support, in class order.
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSample {
    pub image: Vec<f64>,
    pub soft_label: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSet {
    pub samples: Vec<TriggerSample>,
    pub role: Role,
    pub key_fingerprint: String,
    pub stream: StreamId,
    image_shape: Vec<usize>,
}

impl TriggerSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.image_shape
    }

    /// All trigger images as one `n × H × W × C` batch.
    pub fn images(&self) -> Tensor {
        let rows: Vec<&[f64]> = self.samples.iter().map(|s| s.image.as_slice()).collect();
        Tensor::stack(&rows, &self.image_shape).expect("triggers share the key's image shape")
    }

    pub fn soft_labels(&self) -> Tensor {
        let c = self.samples.first().map_or(0, |s| s.soft_label.len());
        let rows: Vec<&[f64]> = self.samples.iter().map(|s| s.soft_label.as_slice()).collect();
        Tensor::stack(&rows, &[c]).expect("labels share the class count")
    }

    pub fn source_tuples(&self) -> Vec<&[usize]> {
        self.samples.iter().map(|s| s.provenance.sources.as_slice()).collect()
    }
}

fn check_compatible(key: &SecretKey, dataset: &Dataset) -> Result<()> {
    if key.classes != dataset.classes() {
        return Err(MixerError::Data(format!(
            "key has {} classes, dataset {}",
            key.classes,
            dataset.classes()
        )));
    }
    if key.image_shape() != dataset.image_shape() {
        return Err(MixerError::Data(format!(
            "key overlay is {:?}, dataset images are {:?}",
            key.image_shape(),
            dataset.image_shape()
        )));
    }
    Ok(())
}

fn synth_with_pools<R: Rng + ?Sized>(
    key: &SecretKey,
    dataset: &Dataset,
    pools: &[Vec<usize>],
    rng: &mut R,
) -> Result<TriggerSample> {
    let mut image = vec![0.0; key.overlay.len()];
    let mut sources = Vec::with_capacity(key.support_size);
    for (class, &weight) in key.lambda.iter().enumerate() {
        if weight <= 0.0 {
            continue;
        }
        let &idx = pools[class]
            .choose(rng)
            .ok_or_else(|| MixerError::Data(format!("class {class} has no images in {}", dataset.name())))?;
        sources.push(idx);
        for (acc, x) in image.iter_mut().zip(dataset.image(idx)) {
            *acc += weight * x;
        }
    }
    for (acc, o) in image.iter_mut().zip(key.overlay.data()) {
        *acc = (*acc + o).clamp(0.0, 1.0);
    }
    Ok(TriggerSample {
        image,
        soft_label: mixup_label(&key.mu),
        provenance: Provenance {
            pool: dataset.partition(),
            sources,
        },
    })
}

/// `Σ μ_i y_i` over one-hot basis vectors.
fn mixup_label(mu: &[f64]) -> Vec<f64> {
    let mut label = vec![0.0; mu.len()];
    for (i, &w) in mu.iter().enumerate() {
        let mut one_hot = vec![0.0; mu.len()];
        one_hot[i] = 1.0;
        for (l, y) in label.iter_mut().zip(one_hot) {
            *l += w * y;
        }
    }
    label
}

/// One trigger drawn from `dataset` with fresh source images.
pub fn synth_trigger<R: Rng + ?Sized>(key: &SecretKey, dataset: &Dataset, rng: &mut R) -> Result<TriggerSample> {
    check_compatible(key, dataset)?;
    synth_with_pools(key, dataset, &dataset.class_pools(), rng)
}

/// `n` triggers with pairwise distinct source tuples on the given stream.
/// The role fixes which partition the sources may come from: embedding uses
/// the training split, verification the test split, measurement any
/// non-fine-tune split.
pub fn synth_set(key: &SecretKey, dataset: &Dataset, n: usize, role: Role, stream: &StreamId) -> Result<TriggerSet> {
    if n == 0 {
        return Err(MixerError::Config("a trigger set needs at least one sample".into()));
    }
    if !role.accepts(dataset.partition()) {
        return Err(MixerError::Protocol(format!(
            "{} triggers cannot be drawn from the {} partition",
            role.name(),
            dataset.partition().name()
        )));
    }
    check_compatible(key, dataset)?;
    let pools = dataset.class_pools();
    let distinct: f64 = key
        .lambda
        .iter()
        .zip(&pools)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, p)| p.len() as f64)
        .product();
    if (n as f64) > distinct {
        return Err(MixerError::Data(format!(
            "{} offers only {distinct} distinct source tuples, {n} requested",
            dataset.name()
        )));
    }
    let mut rng = stream.rng();
    let mut seen = HashSet::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    // source tuples are drawn without replacement within a set
    while samples.len() < n {
        let s = synth_with_pools(key, dataset, &pools, &mut rng)?;
        if seen.insert(s.provenance.sources.clone()) {
            samples.push(s);
        }
    }
    Ok(TriggerSet {
        samples,
        role,
        key_fingerprint: key.fingerprint(),
        stream: stream.clone(),
        image_shape: dataset.image_shape().to_vec(),
    })
}

/// Writes each trigger as an 8-bit PNG (`trigger_0000.png`, ...).
pub fn dump_triggers_png(set: &TriggerSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (h, w, c) = (set.image_shape[0] as u32, set.image_shape[1] as u32, set.image_shape[2]);
    for (i, s) in set.samples.iter().enumerate() {
        let bytes: Vec<u8> = s.image.iter().map(|v| (v * 255.0).round() as u8).collect();
        let path = dir.join(format!("trigger_{i:04}.png"));
        let result = match c {
            1 => image::GrayImage::from_raw(w, h, bytes).map(|im| im.save(&path)),
            3 => image::RgbImage::from_raw(w, h, bytes).map(|im| im.save(&path)),
            _ => return Err(MixerError::Config(format!("cannot export {c}-channel images"))),
        };
        result
            .expect("buffer sized from the image shape")
            .map_err(|e| MixerError::Io(std::io::Error::other(e)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_blobs;
    use crate::keygen::{generate_key, KeyProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy_key(lambda: Vec<f64>, mu: Vec<f64>, overlay: Vec<f64>) -> SecretKey {
        SecretKey {
            classes: 2,
            support_size: 2,
            alpha: vec![1.0, 1.0],
            lambda,
            mu,
            overlay: Tensor::new(vec![2, 2, 1], overlay).unwrap(),
            master_seed: 0,
            created: None,
        }
    }

    fn toy_data(partition: Partition) -> Dataset {
        let images = Tensor::new(vec![2, 2, 2, 1], vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        Dataset::new("toy", images, vec![0, 1], 2, partition).unwrap()
    }

    #[test]
    fn two_by_two_mix_with_clipping() {
        let key = toy_key(vec![0.5, 0.5], vec![0.3, 0.7], vec![0.8, 0.0, 0.0, 0.0]);
        let t = synth_trigger(&key, &toy_data(Partition::Train), &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        // [[1.3, 1], [0, 0.5]] clipped
        assert_eq!(t.image, vec![1.0, 1.0, 0.0, 0.5]);
        assert_eq!(t.soft_label, vec![0.3, 0.7]);
    }

    #[test]
    fn one_hot_lambda_without_overlay_copies_source() {
        let mut key = toy_key(vec![0.0, 1.0], vec![0.4, 0.6], vec![0.0; 4]);
        key.support_size = 1;
        let data = toy_data(Partition::Train);
        let t = synth_trigger(&key, &data, &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.image, data.image(1));
        assert_eq!(t.provenance.sources, vec![1]);
    }

    #[test]
    fn soft_label_is_mu_bit_for_bit() {
        let key = generate_key(&KeyProfile::uniform(10, 4, 3).unwrap(), &[8, 8, 1]).unwrap();
        assert_eq!(mixup_label(&key.mu), key.mu);
    }

    #[test]
    fn roles_are_bound_to_partitions() {
        let key = generate_key(&KeyProfile::uniform(4, 2, 3).unwrap(), &[8, 8, 1]).unwrap();
        let base = synth_blobs(4, 10, 8, 8, 1, 0).unwrap();
        let idx: Vec<usize> = (0..base.len()).collect();
        let train = base.subset(&idx, Partition::Train).unwrap();
        let test = base.subset(&idx, Partition::Test).unwrap();
        let s = StreamId::new(1, "t");
        assert!(synth_set(&key, &train, 3, Role::Embed, &s).is_ok());
        assert!(matches!(
            synth_set(&key, &test, 3, Role::Embed, &s),
            Err(MixerError::Protocol(_))
        ));
        assert!(matches!(
            synth_set(&key, &train, 3, Role::Verify, &s),
            Err(MixerError::Protocol(_))
        ));
        assert!(synth_set(&key, &test, 3, Role::Verify, &s).is_ok());
        assert!(synth_set(&key, &base, 3, Role::Measure, &s).is_err());
        assert!(synth_set(&key, &train, 0, Role::Embed, &s).is_err());
    }

    #[test]
    fn empty_class_pool_is_a_data_error() {
        let key = toy_key(vec![0.5, 0.5], vec![0.3, 0.7], vec![0.0; 4]);
        let data = toy_data(Partition::Train).subset(&[0], Partition::Train).unwrap();
        assert!(matches!(
            synth_trigger(&key, &data, &mut ChaCha20Rng::seed_from_u64(0)),
            Err(MixerError::Data(_))
        ));
    }
}
