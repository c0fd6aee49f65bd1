//! `MXWM` model container.
//!
//! ```text
//! "MXWM" | u16 version | u16 len, arch name | u32 classes
//! | u8 rank, u32 × rank input shape | u32 layer count | layer table
//! | f32 parameters (weights then bias, layer order) | u32 CRC32
//! ```
//! All integers and floats are little-endian; the CRC covers every byte
//! before it.

use std::path::Path;

use super::layer::{Activation, Conv2d, Dense, Layer, Padding};
use super::model::{Model, Precision};
use super::tensor::Tensor;
use crate::error::{MixerError, Result};

pub const MAGIC: &[u8; 4] = b"MXWM";
pub const FORMAT_VERSION: u16 = 1;

const TAG_CONV: u8 = 1;
const TAG_POOL: u8 = 2;
const TAG_DENSE: u8 = 3;
const TAG_DROPOUT: u8 = 4;
const TAG_FLATTEN: u8 = 5;
const TAG_SOFTMAX: u8 = 6;

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Linear => 0,
        Activation::Relu => 1,
    }
}

fn padding_code(p: Padding) -> u8 {
    match p {
        Padding::Valid => 0,
        Padding::Same => 1,
    }
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| MixerError::Format(format!("{what} {v} does not fit in u32")))
}

/// Serialises a model. Parameters are written as `f32`.
pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    use super::model::Classifier;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let name = model.arch().as_bytes();
    let name_len = u16::try_from(name.len()).map_err(|_| MixerError::Format("architecture name too long".into()))?;
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&u32_of(model.class_count(), "class count")?.to_le_bytes());
    let shape = model.input_shape();
    out.push(u8::try_from(shape.len()).map_err(|_| MixerError::Format("input rank too large".into()))?);
    for &d in shape {
        out.extend_from_slice(&u32_of(d, "input extent")?.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(model.layers().len(), "layer count")?.to_le_bytes());
    for layer in model.layers() {
        match layer {
            Layer::Conv2d(c) => {
                out.push(TAG_CONV);
                for v in [c.in_channels, c.filters, c.kernel] {
                    out.extend_from_slice(&u32_of(v, "conv dimension")?.to_le_bytes());
                }
                out.push(padding_code(c.padding));
                out.push(activation_code(c.activation));
            }
            Layer::MaxPool2d { window } => {
                out.push(TAG_POOL);
                out.extend_from_slice(&u32_of(*window, "pool window")?.to_le_bytes());
            }
            Layer::Dense(d) => {
                out.push(TAG_DENSE);
                out.extend_from_slice(&u32_of(d.inputs, "dense inputs")?.to_le_bytes());
                out.extend_from_slice(&u32_of(d.units, "dense units")?.to_le_bytes());
                out.push(activation_code(d.activation));
            }
            Layer::Dropout { rate } => {
                out.push(TAG_DROPOUT);
                out.extend_from_slice(&rate.to_le_bytes());
            }
            Layer::Flatten => out.push(TAG_FLATTEN),
            Layer::Softmax => out.push(TAG_SOFTMAX),
        }
    }
    for (w, b) in model.layers().iter().filter_map(|l| l.params()) {
        for v in w.data().iter().chain(b.data()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(MixerError::Format(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| MixerError::Format(format!("{what} too large")))?,
            what,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

fn activation_from(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Linear),
        1 => Ok(Activation::Relu),
        other => Err(MixerError::Format(format!("unknown activation code {other}"))),
    }
}

fn padding_from(code: u8) -> Result<Padding> {
    match code {
        0 => Ok(Padding::Valid),
        1 => Ok(Padding::Same),
        other => Err(MixerError::Format(format!("unknown padding code {other}"))),
    }
}

// Guards allocations driven by untrusted header fields.
const MAX_EXTENT: usize = 1 << 16;

fn positive(v: usize, what: &str) -> Result<usize> {
    if v == 0 || v > MAX_EXTENT {
        return Err(MixerError::Format(format!("{what} {v} out of range")));
    }
    Ok(v)
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(MixerError::Format("file too short for an MXWM container".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(MixerError::Format("bad magic, expected \"MXWM\"".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(MixerError::Format("CRC32 mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(MixerError::Format(format!("unsupported format version {version}")));
    }
    let name_len = r.u16("name length")? as usize;
    let arch = std::str::from_utf8(r.take(name_len, "architecture name")?)
        .map_err(|_| MixerError::Format("architecture name is not UTF-8".into()))?
        .to_string();
    let classes = positive(r.u32("class count")?, "class count")?;
    let rank = r.u8("input rank")? as usize;
    if rank == 0 || rank > 3 {
        return Err(MixerError::Format(format!("input rank {rank} unsupported")));
    }
    let input_shape = (0..rank)
        .map(|_| r.u32("input extent").and_then(|v| positive(v, "input extent")))
        .collect::<Result<Vec<_>>>()?;
    let n_layers = r.u32("layer count")?;
    if n_layers > 1024 {
        return Err(MixerError::Format(format!("layer count {n_layers} out of range")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let layer = match r.u8("layer tag")? {
            TAG_CONV => {
                let in_channels = positive(r.u32("conv channels")?, "conv channels")?;
                let filters = positive(r.u32("conv filters")?, "conv filters")?;
                let kernel = positive(r.u32("conv kernel")?, "conv kernel")?;
                let padding = padding_from(r.u8("padding")?)?;
                let activation = activation_from(r.u8("activation")?)?;
                Layer::Conv2d(Conv2d {
                    filters,
                    kernel,
                    in_channels,
                    padding,
                    activation,
                    weight: Tensor::zeros(vec![kernel, kernel, in_channels, filters]),
                    bias: Tensor::zeros(vec![filters]),
                })
            }
            TAG_POOL => Layer::MaxPool2d {
                window: positive(r.u32("pool window")?, "pool window")?,
            },
            TAG_DENSE => {
                let inputs = positive(r.u32("dense inputs")?, "dense inputs")?;
                let units = positive(r.u32("dense units")?, "dense units")?;
                let activation = activation_from(r.u8("activation")?)?;
                Layer::Dense(Dense {
                    inputs,
                    units,
                    activation,
                    weight: Tensor::zeros(vec![inputs, units]),
                    bias: Tensor::zeros(vec![units]),
                })
            }
            TAG_DROPOUT => {
                let rate = r.f64("dropout rate")?;
                if !(0.0..1.0).contains(&rate) {
                    return Err(MixerError::Format(format!("dropout rate {rate} out of range")));
                }
                Layer::Dropout { rate }
            }
            TAG_FLATTEN => Layer::Flatten,
            TAG_SOFTMAX => Layer::Softmax,
            other => return Err(MixerError::Format(format!("unknown layer tag {other}"))),
        };
        layers.push(layer);
    }
    for layer in layers.iter_mut() {
        if let Some((w, b)) = layer.params_mut() {
            let wd = r.f32s(w.len(), "weights")?;
            w.data_mut().copy_from_slice(&wd);
            let bd = r.f32s(b.len(), "bias")?;
            b.data_mut().copy_from_slice(&bd);
        }
    }
    if r.pos != body.len() {
        return Err(MixerError::Format(format!(
            "{} trailing bytes after parameters",
            body.len() - r.pos
        )));
    }
    if layers
        .iter()
        .filter_map(|l| l.params())
        .any(|(w, b)| !w.all_finite() || !b.all_finite())
    {
        return Err(MixerError::Format("non-finite parameter".into()));
    }
    Model::new(arch, input_shape, classes, layers, Precision::F32)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::arch::{build_architecture, Architecture};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn model() -> Model {
        build_architecture(
            Architecture::MnistCnn,
            &[28, 28, 1],
            10,
            &mut ChaCha20Rng::seed_from_u64(2),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_model(&m).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_model(&model()).unwrap();
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x40;
        assert!(matches!(decode_model(&flipped), Err(MixerError::Format(_))));
        assert!(decode_model(&bytes[..bytes.len() / 2]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_model(&bad_magic).is_err());
    }
}
