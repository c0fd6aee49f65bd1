use serde::{Deserialize, Serialize};

use crate::dataio::SplitDataset;
use crate::error::{MixerError, Result};
use crate::rng::StreamId;
use crate::tensornet::{Algorithm, Mode, Model, Optimizer, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub optimizer: OptimizerConfig,
}

impl Default for FinetuneConfig {
    /// Adam at lr 1e-5 for 30 epochs, batch 64.
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig {
                algorithm: Algorithm::Adam,
                learning_rate: 1e-5,
                momentum: 0.0,
                batch_size: 64,
                epochs: 30,
            },
        }
    }
}

/// Continues training a copy of `model` on the fine-tune split with its
/// natural labels.
pub fn finetune(model: &Model, split: &SplitDataset, cfg: &FinetuneConfig, stream: &StreamId) -> Result<Model> {
    let mut out = model.clone();
    let mut opt = Optimizer::new(cfg.optimizer.clone())?;
    let mut rng = stream.rng();
    let data = &split.finetune;
    let targets = data.one_hot();
    out.set_mode(Mode::Training);
    for epoch in 1..=cfg.optimizer.epochs {
        let loss = out
            .train_epoch(data.images(), &targets, &mut opt, &mut rng)
            .map_err(|e| MixerError::Training {
                epoch,
                source: Box::new(e),
            })?;
        if !loss.is_finite() {
            return Err(MixerError::Training {
                epoch,
                source: Box::new(MixerError::Numeric {
                    layer: 0,
                    stage: "loss",
                }),
            });
        }
    }
    out.set_mode(Mode::Inference);
    Ok(out)
}
