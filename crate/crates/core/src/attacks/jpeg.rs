//! Baseline JPEG round trip without entropy coding or chroma subsampling.
//!
//! Pixels stay real-valued between stages; the only lossy step is the
//! quantization of DCT coefficients.

use std::sync::OnceLock;

use crate::error::{MixerError, Result};
use crate::tensornet::{Classifier, Tensor};

/// Annex K luminance table, natural (row-major) order.
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance table, natural order.
pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

fn check_quality(quality: u8) -> Result<()> {
    if !(1..=100).contains(&quality) {
        return Err(MixerError::Config(format!("JPEG quality {quality} outside [1, 100]")));
    }
    Ok(())
}

/// IJG percentage scale for a quality factor.
pub fn quality_scale(quality: u8) -> Result<u32> {
    check_quality(quality)?;
    let q = u32::from(quality);
    Ok(if q >= 50 { 200 - 2 * q } else { 5000 / q })
}

pub fn scaled_table(base: &[u16; 64], quality: u8) -> Result<[u16; 64]> {
    let scale = quality_scale(quality)?;
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(out)
}

/// Orthonormal DCT-II basis, `C[u][x]`.
fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let a = if u == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

pub type Block = [f64; 64];

pub fn forward_dct(block: &Block) -> Block {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    // rows: tmp = X Cᵀ
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|x| block[y * 8 + x] * c[v][x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|y| c[u][y] * tmp[y * 8 + v]).sum();
        }
    }
    out
}

pub fn inverse_dct(coeffs: &Block) -> Block {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|v| coeffs[u * 8 + v] * c[v][x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|u| c[u][y] * tmp[u * 8 + x]).sum();
        }
    }
    out
}

/// Level-shifts, transforms, quantizes and reconstructs one plane in place.
/// Partial edge blocks are padded by edge replication.
fn roundtrip_plane(plane: &mut [f64], h: usize, w: usize, table: &[u16; 64]) {
    let mut block = [0.0; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for i in 0..8 {
                for j in 0..8 {
                    let y = (by + i).min(h - 1);
                    let x = (bx + j).min(w - 1);
                    block[i * 8 + j] = plane[y * w + x] - 128.0;
                }
            }
            let mut coeffs = forward_dct(&block);
            for (c, &q) in coeffs.iter_mut().zip(table) {
                let q = f64::from(q);
                *c = (*c / q).round() * q;
            }
            let rec = inverse_dct(&coeffs);
            for i in 0..8.min(h - by) {
                for j in 0..8.min(w - bx) {
                    plane[(by + i) * w + bx + j] = rec[i * 8 + j] + 128.0;
                }
            }
        }
    }
}

/// JPEG round trip of one `H × W × C` image with values in [0, 1]
/// (C = 1 for grayscale, 3 for RGB).
pub fn jpeg_filter(image: &[f64], shape: &[usize], quality: u8) -> Result<Vec<f64>> {
    let luma = scaled_table(&LUMA_BASE, quality)?;
    let chroma = scaled_table(&CHROMA_BASE, quality)?;
    let [h, w, c] = *shape else {
        return Err(MixerError::Config(format!(
            "expected an H×W×C image shape, got {shape:?}"
        )));
    };
    if image.len() != h * w * c {
        return Err(MixerError::InputShape {
            expected: shape.to_vec(),
            actual: vec![image.len()],
        });
    }
    match c {
        1 => {
            let mut y: Vec<f64> = image.iter().map(|v| v * 255.0).collect();
            roundtrip_plane(&mut y, h, w, &luma);
            Ok(y.iter().map(|v| (v / 255.0).clamp(0.0, 1.0)).collect())
        }
        3 => {
            let n = h * w;
            let (mut yp, mut cb, mut cr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                let (r, g, b) = (image[3 * i] * 255.0, image[3 * i + 1] * 255.0, image[3 * i + 2] * 255.0);
                yp[i] = 0.299 * r + 0.587 * g + 0.114 * b;
                cb[i] = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
                cr[i] = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
            }
            roundtrip_plane(&mut yp, h, w, &luma);
            roundtrip_plane(&mut cb, h, w, &chroma);
            roundtrip_plane(&mut cr, h, w, &chroma);
            let mut out = vec![0.0; 3 * n];
            for i in 0..n {
                let (y, b, r) = (yp[i], cb[i] - 128.0, cr[i] - 128.0);
                out[3 * i] = ((y + 1.402 * r) / 255.0).clamp(0.0, 1.0);
                out[3 * i + 1] = ((y - 0.344_136 * b - 0.714_136 * r) / 255.0).clamp(0.0, 1.0);
                out[3 * i + 2] = ((y + 1.772 * b) / 255.0).clamp(0.0, 1.0);
            }
            Ok(out)
        }
        other => Err(MixerError::Config(format!(
            "JPEG filter supports 1 or 3 channels, got {other}"
        ))),
    }
}

/// Applies the JPEG round trip to every image of a batch.
pub fn jpeg_batch(batch: &Tensor, quality: u8) -> Result<Tensor> {
    let shape = &batch.shape()[1..];
    let mut data = Vec::with_capacity(batch.len());
    for i in 0..batch.rows() {
        data.extend(jpeg_filter(batch.row(i), shape, quality)?);
    }
    Tensor::new(batch.shape().to_vec(), data)
}

/// A classifier whose queries pass through the JPEG round trip first.
#[derive(Debug, Clone)]
pub struct JpegFiltered<M> {
    pub inner: M,
    pub quality: u8,
}

impl<M: Classifier> JpegFiltered<M> {
    pub fn new(inner: M, quality: u8) -> Result<Self> {
        check_quality(quality)?;
        Ok(Self { inner, quality })
    }
}

impl<M: Classifier> Classifier for JpegFiltered<M> {
    fn input_shape(&self) -> &[usize] {
        self.inner.input_shape()
    }

    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        self.inner.predict_proba(&jpeg_batch(batch, self.quality)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ijg_scaling() {
        assert_eq!(quality_scale(55).unwrap(), 90);
        assert_eq!(quality_scale(10).unwrap(), 500);
        assert_eq!(scaled_table(&LUMA_BASE, 55).unwrap()[0], 14);
        assert!(scaled_table(&LUMA_BASE, 100).unwrap().iter().all(|&q| q == 1));
        assert!(scaled_table(&CHROMA_BASE, 1).unwrap().iter().all(|&q| q == 255));
        assert!(quality_scale(0).is_err());
        assert!(quality_scale(101).is_err());
    }

    #[test]
    fn dct_of_constant_block_is_dc_only() {
        let coeffs = forward_dct(&[10.0; 64]);
        assert!((coeffs[0] - 80.0).abs() < 1e-12);
        assert!(coeffs[1..].iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn rgb_roundtrip_at_full_quality() {
        let img: Vec<f64> = (0..10 * 12 * 3).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let out = jpeg_filter(&img, &[10, 12, 3], 100).unwrap();
        let err = img.iter().zip(&out).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 2.0 / 255.0, "{err}");
    }
}
