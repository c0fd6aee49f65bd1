//! Watermark embedding: the trigger set is appended to the training split
//! with μ as its soft label and the model is trained on the union.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Partition, SplitDataset};
use crate::error::{MixerError, Result};
use crate::keygen::SecretKey;
use crate::rng::StreamId;
use crate::tensornet::{build_architecture, Architecture, Classifier, Mode, Model, Optimizer, OptimizerConfig, Tensor};
use crate::trigger::{synth_set, Role, TriggerSet};
use crate::verify::{compute_rho, DecisionRule};

/// Fraction of the training split used as the trigger count when none is
/// given.
pub const DEFAULT_NE_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub architecture: Architecture,
    pub optimizer: OptimizerConfig,
    /// Size of the embedding set `S_e`.
    pub n_e: usize,
    /// Draw a new `S_e` every epoch instead of reusing one set.
    pub resample_per_epoch: bool,
    /// Seeds weight init, batch order and dropout.
    pub master_seed: u64,
    /// Triggers in the per-epoch recovery probe (0 disables it).
    pub log_measure_n: usize,
}

impl EmbedConfig {
    pub fn new(architecture: Architecture, optimizer: OptimizerConfig, n_e: usize, master_seed: u64) -> Self {
        Self {
            architecture,
            optimizer,
            n_e,
            resample_per_epoch: false,
            master_seed,
            log_measure_n: 200,
        }
    }

    /// `n_e` as a fraction of a training split of `train_len` examples.
    pub fn n_e_from_fraction(train_len: usize, fraction: f64) -> Result<usize> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(MixerError::Config(format!(
                "trigger fraction {fraction} outside (0, 1]"
            )));
        }
        Ok(((train_len as f64 * fraction).round() as usize).max(1))
    }

    fn validate(&self, train_len: usize, watermark: bool) -> Result<()> {
        self.optimizer.validate()?;
        if watermark && (self.n_e == 0 || self.n_e > train_len) {
            return Err(MixerError::Config(format!(
                "n_e = {} must lie in [1, {train_len}]",
                self.n_e
            )));
        }
        Ok(())
    }
}

/// Natural examples with one-hot labels followed by the triggers with μ.
#[derive(Debug, Clone)]
pub struct TrainingStream {
    pub images: Tensor,
    pub targets: Tensor,
    pub natural: usize,
    pub triggers: usize,
}

impl TrainingStream {
    pub fn len(&self) -> usize {
        self.natural + self.triggers
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Appends `s_e` to the training split. Shuffling happens per epoch in the
/// training loop, so every trigger is seen exactly once per epoch.
pub fn inject(train: &Dataset, s_e: Option<&TriggerSet>) -> Result<TrainingStream> {
    if train.partition() != Partition::Train {
        return Err(MixerError::Protocol(format!(
            "injection target must be the training split, got {}",
            train.partition().name()
        )));
    }
    let mut images = train.images().data().to_vec();
    let mut targets = train.one_hot().into_data();
    let mut triggers = 0;
    if let Some(set) = s_e {
        if set.role != Role::Embed {
            return Err(MixerError::Protocol(format!(
                "only embed-role triggers may be injected, got {}",
                set.role.name()
            )));
        }
        for s in &set.samples {
            images.extend_from_slice(&s.image);
            targets.extend_from_slice(&s.soft_label);
        }
        triggers = set.len();
    }
    let n = train.len() + triggers;
    let mut shape = vec![n];
    shape.extend_from_slice(train.image_shape());
    Ok(TrainingStream {
        images: Tensor::new(shape, images)?,
        targets: Tensor::new(vec![n, train.classes()], targets)?,
        natural: train.len(),
        triggers,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Validation accuracy, percent.
    pub ta_val: f64,
    /// Recovery on held-out measurement triggers, percent.
    pub rec_measure: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,TA_val,Rec_measure\n");
        for e in &self.epochs {
            let rec = e.rec_measure.map(|r| format!("{r:.2}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.6},{:.2},{}", e.epoch, e.loss, e.ta_val, rec);
        }
        out
    }
}

/// Percentage of `dataset` classified correctly.
pub fn accuracy(model: &dyn Classifier, dataset: &Dataset) -> Result<f64> {
    let preds = model.predict(dataset.images())?;
    let hits = preds.iter().zip(dataset.labels()).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / dataset.len() as f64)
}

/// Trains `cfg.architecture` on the training split plus `n_e` embedding
/// triggers drawn from the key.
pub fn train_watermarked(split: &SplitDataset, key: &SecretKey, cfg: &EmbedConfig) -> Result<(Model, TrainingLog)> {
    train(split, Some(key), cfg)
}

/// Same recipe without any triggers (the host model).
pub fn train_vanilla(split: &SplitDataset, cfg: &EmbedConfig) -> Result<(Model, TrainingLog)> {
    train(split, None, cfg)
}

fn embed_stream(key: &SecretKey, epoch: Option<usize>) -> StreamId {
    let base = StreamId::new(key.master_seed, "trigger/embed");
    match epoch {
        Some(e) => base.child(format!("epoch{e}")),
        None => base,
    }
}

/// The fixed embedding set a key produces on a training split.
pub fn embedding_set(key: &SecretKey, train: &Dataset, n_e: usize) -> Result<TriggerSet> {
    synth_set(key, train, n_e, Role::Embed, &embed_stream(key, None))
}

fn train(split: &SplitDataset, key: Option<&SecretKey>, cfg: &EmbedConfig) -> Result<(Model, TrainingLog)> {
    cfg.validate(split.train.len(), key.is_some())?;
    let shape = split.train.image_shape().to_vec();
    let classes = split.train.classes();
    let mut init_rng = StreamId::new(cfg.master_seed, "embed/init").rng();
    let mut model = build_architecture(cfg.architecture, &shape, classes, &mut init_rng)?;
    let mut shuffle_rng = StreamId::new(cfg.master_seed, "embed/shuffle").rng();
    let mut opt = Optimizer::new(cfg.optimizer.clone())?;

    let mut s_e = match key {
        Some(k) => Some(embedding_set(k, &split.train, cfg.n_e)?),
        None => None,
    };
    let probe = match key {
        Some(k) if cfg.log_measure_n > 0 => Some(synth_set(
            k,
            &split.validation,
            cfg.log_measure_n,
            Role::Measure,
            &StreamId::new(k.master_seed, "trigger/measure/log"),
        )?),
        _ => None,
    };

    let mut log = TrainingLog::default();
    let mut stream = inject(&split.train, s_e.as_ref())?;
    for epoch in 1..=cfg.optimizer.epochs {
        if cfg.resample_per_epoch && epoch > 1 {
            if let Some(k) = key {
                s_e = Some(synth_set(
                    k,
                    &split.train,
                    cfg.n_e,
                    Role::Embed,
                    &embed_stream(k, Some(epoch)),
                )?);
                stream = inject(&split.train, s_e.as_ref())?;
            }
        }
        model.set_mode(Mode::Training);
        let loss = model
            .train_epoch(&stream.images, &stream.targets, &mut opt, &mut shuffle_rng)
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
        model.set_mode(Mode::Inference);
        let ta_val = accuracy(&model, &split.validation)?;
        let rec_measure = match (&probe, key) {
            (Some(p), Some(k)) => Some(100.0 * compute_rho(&model, p, k, DecisionRule::Plain)?),
            _ => None,
        };
        log.epochs.push(EpochLog {
            epoch,
            loss,
            ta_val,
            rec_measure,
        });
    }
    model.set_mode(Mode::Inference);
    Ok((model, log))
}
