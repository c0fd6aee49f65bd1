//! MNIST IDX reader (big-endian headers, u8 payloads).

use std::path::Path;

use super::dataset::{Dataset, Partition};
use crate::error::{MixerError, Result};
use crate::tensornet::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const MNIST_CLASSES: usize = 10;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| MixerError::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "image file")?;
    if magic != IMAGE_MAGIC {
        return Err(MixerError::Format(format!(
            "image file: bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "image file")? as usize;
    let rows = be_u32(bytes, 8, "image file")? as usize;
    let cols = be_u32(bytes, 12, "image file")? as usize;
    if rows == 0 || cols == 0 {
        return Err(MixerError::Format("image file: zero image extent".into()));
    }
    let need = count
        .checked_mul(rows * cols)
        .ok_or_else(|| MixerError::Format("image file: header sizes overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(MixerError::Format(format!(
            "image file: truncated payload ({} of {need} bytes)",
            payload.len()
        )));
    }
    if payload.len() > need {
        return Err(MixerError::Format(format!(
            "image file: count mismatch, header says {count} images but payload holds {} bytes",
            payload.len()
        )));
    }
    Ok((count, rows, cols, payload))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "label file")?;
    if magic != LABEL_MAGIC {
        return Err(MixerError::Format(format!(
            "label file: bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = be_u32(bytes, 4, "label file")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(MixerError::Format(format!(
            "label file: header says {count} labels, payload holds {}",
            payload.len()
        )));
    }
    Ok(payload)
}

/// Builds a dataset from in-memory IDX image and label files.
pub fn decode_idx(name: &str, image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if labels.len() != count {
        return Err(MixerError::Format(format!(
            "count mismatch: {count} images but {} labels",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= MNIST_CLASSES) {
        return Err(MixerError::Format(format!("label byte {bad} out of range")));
    }
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let images = Tensor::new(vec![count, rows, cols, 1], data)?;
    Dataset::new(
        name,
        images,
        labels.iter().map(|&l| l as usize).collect(),
        MNIST_CLASSES,
        Partition::Full,
    )
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let name = images_path
        .as_ref()
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    decode_idx(&name, &std::fs::read(images_path)?, &std::fs::read(labels_path)?)
}

#[cfg(test)]
pub(crate) fn encode_idx(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
