//! Removal attacks: weight pruning, quantization, fine-tuning and JPEG
//! filtering of the queries. Every attack works on a copy.

mod artifact;
mod finetune;
mod jpeg;
mod prune;
mod quant;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use artifact::{load_attacked, save_attacked};
pub use finetune::{finetune, FinetuneConfig};
pub use jpeg::{
    forward_dct, inverse_dct, jpeg_batch, jpeg_filter, quality_scale, scaled_table, Block, JpegFiltered, CHROMA_BASE,
    LUMA_BASE,
};
pub use prune::{prune, pruned_count};
pub use quant::{
    nearest_half, quantize, QuantMode, QuantParams, QuantizedModel, WeightPayload, DEFAULT_CALIBRATION_SIZE,
};

use crate::dataio::SplitDataset;
use crate::error::{MixerError, Result};
use crate::rng::StreamId;
use crate::tensornet::{Classifier, Model, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Prune(f64),
    Quantize(QuantMode),
    Finetune(FinetuneConfig),
    Jpeg(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, seed: u64) -> Result<Self> {
        let spec = Self { kind, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            AttackKind::Prune(k) if !(0.0..=1.0).contains(k) => {
                Err(MixerError::Config(format!("pruning rate {k} outside [0, 1]")))
            }
            AttackKind::Jpeg(q) if !(1..=100).contains(q) => {
                Err(MixerError::Config(format!("JPEG quality {q} outside [1, 100]")))
            }
            AttackKind::Finetune(cfg) => cfg.optimizer.validate(),
            _ => Ok(()),
        }
    }

    /// Parses `prune:0.3`, `dyn`, `uint8`, `int8`, `f16`, `finetune` or
    /// `jpeg:55`.
    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let (head, arg) = match text.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (text, None),
        };
        let bad = || MixerError::Config(format!("cannot parse attack {text:?}"));
        let kind = match (head, arg) {
            ("prune", Some(a)) => AttackKind::Prune(a.parse().map_err(|_| bad())?),
            ("jpeg", Some(a)) => AttackKind::Jpeg(a.parse().map_err(|_| bad())?),
            ("dyn", None) => AttackKind::Quantize(QuantMode::Dynamic),
            ("uint8", None) => AttackKind::Quantize(QuantMode::FullUint8),
            ("int8", None) => AttackKind::Quantize(QuantMode::FullInt8),
            ("f16", None) => AttackKind::Quantize(QuantMode::Float16),
            ("finetune", None) => AttackKind::Finetune(FinetuneConfig::default()),
            _ => return Err(bad()),
        };
        Self::new(kind, seed)
    }

    fn stream(&self) -> StreamId {
        StreamId::new(self.seed, format!("attack/{self}"))
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            AttackKind::Prune(k) => write!(f, "prune:{k}"),
            AttackKind::Quantize(m) => f.write_str(m.name()),
            AttackKind::Finetune(_) => f.write_str("finetune"),
            AttackKind::Jpeg(q) => write!(f, "jpeg:{q}"),
        }
    }
}

/// Expands `prune:START..END:STEP` into its (inclusive) rate grid.
pub fn parse_sweep(text: &str) -> Result<Vec<f64>> {
    let bad = || MixerError::Config(format!("cannot parse sweep {text:?}, expected prune:START..END:STEP"));
    let rest = text.strip_prefix("prune:").ok_or_else(bad)?;
    let (range, step) = rest.rsplit_once(':').ok_or_else(bad)?;
    let (start, end) = range.split_once("..").ok_or_else(bad)?;
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let (start, end, step) = (parse(start)?, parse(end)?, parse(step)?);
    if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start > end || step <= 0.0 {
        return Err(bad());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    // snap to the decimal grid so 0.1 + 0.05 prints as 0.15
    Ok((0..=count)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// The outcome of an attack: a transformed model, or a wrapper that
/// transforms the queries.
#[derive(Debug, Clone)]
pub enum AttackedModel {
    Plain(Model),
    Quantized(QuantizedModel),
    Jpeg(JpegFiltered<Model>),
}

impl Classifier for AttackedModel {
    fn input_shape(&self) -> &[usize] {
        match self {
            AttackedModel::Plain(m) => m.input_shape(),
            AttackedModel::Quantized(m) => m.input_shape(),
            AttackedModel::Jpeg(m) => m.input_shape(),
        }
    }

    fn class_count(&self) -> usize {
        match self {
            AttackedModel::Plain(m) => m.class_count(),
            AttackedModel::Quantized(m) => m.class_count(),
            AttackedModel::Jpeg(m) => m.class_count(),
        }
    }

    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        match self {
            AttackedModel::Plain(m) => m.predict_proba(batch),
            AttackedModel::Quantized(m) => m.predict_proba(batch),
            AttackedModel::Jpeg(m) => m.predict_proba(batch),
        }
    }
}

/// The first `DEFAULT_CALIBRATION_SIZE` validation images.
pub fn calibration_batch(split: &SplitDataset) -> Tensor {
    let n = DEFAULT_CALIBRATION_SIZE.min(split.validation.len());
    split.validation.images().select_rows(&(0..n).collect::<Vec<_>>())
}

pub fn apply_attack(model: &Model, spec: &AttackSpec, split: &SplitDataset) -> Result<AttackedModel> {
    spec.validate()?;
    Ok(match &spec.kind {
        AttackKind::Prune(k) => AttackedModel::Plain(prune(model, *k, &spec.stream())?),
        AttackKind::Quantize(mode) => {
            let calib = mode.needs_calibration().then(|| calibration_batch(split));
            AttackedModel::Quantized(quantize(model, *mode, calib.as_ref())?)
        }
        AttackKind::Finetune(cfg) => AttackedModel::Plain(finetune(model, split, cfg, &spec.stream())?),
        AttackKind::Jpeg(q) => AttackedModel::Jpeg(JpegFiltered::new(model.clone(), *q)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trips_through_text() {
        for s in ["prune:0.3", "dyn", "uint8", "int8", "f16", "finetune", "jpeg:55"] {
            assert_eq!(AttackSpec::parse(s, 0).unwrap().to_string(), s);
        }
        for s in ["prune:1.5", "jpeg:0", "jpeg:101", "prune", "f32", "dyn:1"] {
            assert!(AttackSpec::parse(s, 0).is_err(), "{s}");
        }
    }

    #[test]
    fn sweep_grid() {
        let g = parse_sweep("prune:0.0..0.9:0.05").unwrap();
        assert_eq!(g.len(), 19);
        assert_eq!(g[3], 0.15);
        assert_eq!(*g.last().unwrap(), 0.9);
        assert!(parse_sweep("prune:0.5..0.1:0.1").is_err());
        assert!(parse_sweep("jpeg:1..2:1").is_err());
    }
}
