//! On-disk form of attacked models. Weight attacks are plain model files;
//! activation-quantized and input-filtered models are a JSON descriptor
//! pointing at a model file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttackedModel, JpegFiltered, QuantMode, QuantParams, QuantizedModel};
use crate::error::{MixerError, Result};
use crate::tensornet::{load_model, save_model};

const DESCRIPTOR_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    version: u32,
    /// Relative paths resolve against the descriptor's directory.
    model: PathBuf,
    #[serde(default)]
    quant_mode: Option<QuantMode>,
    #[serde(default)]
    activations: Option<Vec<QuantParams>>,
    #[serde(default)]
    jpeg_quality: Option<u8>,
}

fn is_model_file(path: &Path) -> Result<bool> {
    let bytes = std::fs::read(path)?;
    Ok(bytes.starts_with(b"MXWM"))
}

/// Writes `attacked` at `path`: a model file, or a descriptor plus a
/// sibling `<stem>.weights.mxwm`.
pub fn save_attacked(attacked: &AttackedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let sibling = |path: &Path| {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("attacked");
        PathBuf::from(format!("{stem}.weights.mxwm"))
    };
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    let descriptor = match attacked {
        AttackedModel::Plain(m) => return save_model(m, path),
        AttackedModel::Quantized(q) if q.activation_params().is_none() => return save_model(q.dequantized(), path),
        AttackedModel::Quantized(q) => {
            let weights = sibling(path);
            save_model(q.dequantized(), dir.join(&weights))?;
            Descriptor {
                version: DESCRIPTOR_VERSION,
                model: weights,
                quant_mode: Some(q.mode()),
                activations: q.activation_params().map(<[_]>::to_vec),
                jpeg_quality: None,
            }
        }
        AttackedModel::Jpeg(j) => {
            let weights = sibling(path);
            save_model(&j.inner, dir.join(&weights))?;
            Descriptor {
                version: DESCRIPTOR_VERSION,
                model: weights,
                quant_mode: None,
                activations: None,
                jpeg_quality: Some(j.quality),
            }
        }
    };
    std::fs::write(path, serde_json::to_string_pretty(&descriptor)?)?;
    Ok(())
}

/// Reads a model file or a descriptor written by [`save_attacked`].
pub fn load_attacked(path: impl AsRef<Path>) -> Result<AttackedModel> {
    let path = path.as_ref();
    if is_model_file(path)? {
        return Ok(AttackedModel::Plain(load_model(path)?));
    }
    let text = std::fs::read_to_string(path)?;
    let d: Descriptor = serde_json::from_str(&text)?;
    if d.version != DESCRIPTOR_VERSION {
        return Err(MixerError::Format(format!(
            "unsupported descriptor version {}",
            d.version
        )));
    }
    let model_path = if d.model.is_absolute() {
        d.model.clone()
    } else {
        path.parent().unwrap_or_else(|| Path::new("")).join(&d.model)
    };
    let model = load_model(model_path)?;
    match (d.quant_mode, d.jpeg_quality) {
        (Some(mode), None) => Ok(AttackedModel::Quantized(QuantizedModel::from_parts(
            mode,
            model,
            d.activations,
        )?)),
        (None, Some(q)) => Ok(AttackedModel::Jpeg(JpegFiltered::new(model, q)?)),
        _ => Err(MixerError::Format(
            "descriptor must name exactly one of quant_mode, jpeg_quality".into(),
        )),
    }
}
