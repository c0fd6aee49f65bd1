//! Dataset ingestion (MNIST IDX, CIFAR-10 binary, synthetic blobs) and the
//! 80/10/10 split.

pub mod cifar;
pub mod dataset;
pub mod idx;
pub mod split;
pub mod synth;

use std::path::{Path, PathBuf};

pub use cifar::{decode_cifar10, load_cifar10_binary};
pub use dataset::{Dataset, Partition};
pub use idx::{decode_idx, load_idx};
pub use split::{split_80_10_10, split_sizes, SplitDataset};
pub use synth::synth_blobs;

use crate::error::{MixerError, Result};

pub const DATA_DIR_ENV: &str = "MIXER_DATA_DIR";

/// Dataset root: explicit flag, then `MIXER_DATA_DIR`, then `./data`.
pub fn resolve_data_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from("data"),
    }
}

fn find_file(dir: &Path, candidates: &[&str]) -> Option<PathBuf> {
    let subdirs = [PathBuf::new(), PathBuf::from("mnist"), PathBuf::from("MNIST/raw")];
    for sub in &subdirs {
        for name in candidates {
            let p = dir.join(sub).join(name);
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

/// MNIST `(train, test)` from the standard IDX file names under `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let get = |stem: &str| {
        find_file(dir, &[stem, &stem.replacen("-idx", ".idx", 1)])
            .ok_or_else(|| MixerError::Data(format!("{stem} not found under {}", dir.display())))
    };
    let train = load_idx(get("train-images-idx3-ubyte")?, get("train-labels-idx1-ubyte")?)?;
    let test = load_idx(get("t10k-images-idx3-ubyte")?, get("t10k-labels-idx1-ubyte")?)?;
    Ok((train, test))
}

pub fn mnist_available(dir: &Path) -> bool {
    find_file(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"]).is_some()
}

/// CIFAR-10 `(train, test)` from `data_batch_{1..5}.bin` and `test_batch.bin`.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let root = if dir.join("cifar-10-batches-bin").is_dir() {
        dir.join("cifar-10-batches-bin")
    } else {
        dir.to_path_buf()
    };
    let train: Vec<PathBuf> = (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect();
    let test = [root.join("test_batch.bin")];
    for p in train.iter().chain(&test) {
        if !p.is_file() {
            return Err(MixerError::Data(format!("{} not found", p.display())));
        }
    }
    Ok((load_cifar10_binary(&train)?, load_cifar10_binary(&test)?))
}

/// The first `n` examples of a corpus (keeps the corpus's class balance
/// only approximately).
pub fn head(dataset: &Dataset, n: usize) -> Result<Dataset> {
    let idx: Vec<usize> = (0..n.min(dataset.len())).collect();
    let out = dataset.subset(&idx, dataset.partition())?;
    out.validate()?;
    Ok(out)
}
