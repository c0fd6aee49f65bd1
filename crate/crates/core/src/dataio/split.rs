use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::dataset::{Dataset, Partition};
use crate::error::{MixerError, Result};

/// The original training corpus cut 80/10/10 into train, validation and
/// fine-tune parts, plus the untouched held-out test set.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub finetune: Dataset,
    pub test: Dataset,
}

/// Sizes `(⌊0.8N⌋, ⌊0.1N⌋, remainder)`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let validation = n / 10;
    (train, validation, n - train - validation)
}

/// Seeded shuffle of the training corpus into disjoint 80/10/10 parts.
/// Returns the index lists alongside the datasets.
pub fn split_indices(n: usize, seed: u64) -> Result<[Vec<usize>; 3]> {
    if n < 10 {
        return Err(MixerError::Data(format!("need at least 10 examples to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let (tr, va, _) = split_sizes(n);
    let finetune = order.split_off(tr + va);
    let validation = order.split_off(tr);
    Ok([order, validation, finetune])
}

pub fn split_80_10_10(corpus: &Dataset, test: Dataset, seed: u64) -> Result<SplitDataset> {
    if corpus.classes() != test.classes() || corpus.image_shape() != test.image_shape() {
        return Err(MixerError::Data(
            "training corpus and test set disagree on shape or classes".into(),
        ));
    }
    let [tr, va, ft] = split_indices(corpus.len(), seed)?;
    let test = test.subset(&(0..test.len()).collect::<Vec<_>>(), Partition::Test)?;
    Ok(SplitDataset {
        train: corpus.subset(&tr, Partition::Train)?,
        validation: corpus.subset(&va, Partition::Validation)?,
        finetune: corpus.subset(&ft, Partition::Finetune)?,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnist_sizes() {
        assert_eq!(split_sizes(60_000), (48_000, 6_000, 6_000));
        assert_eq!(split_sizes(8_000), (6_400, 800, 800));
        assert_eq!(split_sizes(13), (10, 1, 2));
    }

    #[test]
    fn partition_covers_every_index_once() {
        let parts = split_indices(1234, 9).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..1234).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_partition() {
        assert_eq!(split_indices(500, 3).unwrap(), split_indices(500, 3).unwrap());
        assert_ne!(split_indices(500, 3).unwrap(), split_indices(500, 4).unwrap());
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(split_indices(9, 0).is_err());
    }
}
