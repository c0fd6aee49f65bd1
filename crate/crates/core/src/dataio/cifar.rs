//! CIFAR-10 binary batches: 3073-byte records, one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes in row-major order.

use std::path::Path;

use super::dataset::{Dataset, Partition};
use crate::error::{MixerError, Result};
use crate::tensornet::Tensor;

pub const RECORD_LEN: usize = 3073;
const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
const CLASSES: usize = 10;

/// Appends the records of one batch file to `pixels` / `labels`.
fn decode_batch(bytes: &[u8], what: &str, pixels: &mut Vec<f64>, labels: &mut Vec<usize>) -> Result<()> {
    if bytes.is_empty() || bytes.len() % RECORD_LEN != 0 {
        return Err(MixerError::Format(format!(
            "{what}: length {} is not a multiple of the {RECORD_LEN}-byte record",
            bytes.len()
        )));
    }
    for (r, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let label = rec[0] as usize;
        if label >= CLASSES {
            return Err(MixerError::Format(format!("{what}: record {r} has label byte {label}")));
        }
        labels.push(label);
        let planes = &rec[1..];
        for i in 0..PLANE {
            for c in 0..3 {
                pixels.push(f64::from(planes[c * PLANE + i]) / 255.0);
            }
        }
    }
    Ok(())
}

pub fn decode_cifar10(name: &str, batches: &[&[u8]]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (i, b) in batches.iter().enumerate() {
        decode_batch(b, &format!("batch {i}"), &mut pixels, &mut labels)?;
    }
    if labels.is_empty() {
        return Err(MixerError::Format("no CIFAR-10 batches given".into()));
    }
    let images = Tensor::new(vec![labels.len(), SIDE, SIDE, 3], pixels)?;
    Dataset::new(name, images, labels, CLASSES, Partition::Full)
}

pub fn load_cifar10_binary<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    let raw = batch_paths
        .iter()
        .map(std::fs::read)
        .collect::<std::io::Result<Vec<_>>>()?;
    let views: Vec<&[u8]> = raw.iter().map(|v| v.as_slice()).collect();
    decode_cifar10("cifar10", &views)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch() -> Vec<u8> {
        let mut out = Vec::new();
        for label in 0..10u8 {
            out.push(label);
            out.extend(std::iter::repeat(200).take(PLANE));
            out.extend(std::iter::repeat(100).take(PLANE));
            out.extend(std::iter::repeat(label).take(PLANE));
        }
        out
    }

    #[test]
    fn planar_bytes_become_interleaved_pixels() {
        let b = batch();
        let d = decode_cifar10("t", &[&b]).unwrap();
        assert_eq!(d.image_shape(), &[32, 32, 3]);
        let px = &d.image(7)[..3];
        assert_eq!(px, &[200.0 / 255.0, 100.0 / 255.0, 7.0 / 255.0]);
    }

    #[test]
    fn first_plane_fills_red_channel() {
        let mut b = batch();
        b[1] = 255; // first red byte of record 0
        b[1 + PLANE] = 0;
        let d = decode_cifar10("t", &[&b]).unwrap();
        assert_eq!(d.image(0)[0], 1.0);
        assert_eq!(d.image(0)[1], 0.0);
    }

    #[test]
    fn bad_length_and_label_rejected() {
        let b = batch();
        assert!(decode_cifar10("t", &[&b[..b.len() - 1]]).is_err());
        let mut bad = b.clone();
        bad[0] = 10;
        assert!(decode_cifar10("t", &[&bad]).is_err());
    }
}
