//! Post-training quantization in four modes.
//!
//! Weights are stored as integer (or half-precision) payloads and
//! dequantized for compute. The full integer modes additionally
//! quantize-dequantize every layer boundary with ranges taken from a
//! calibration batch. Biases stay in floating point.

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{MixerError, Result};
use crate::tensornet::{Classifier, Model, Tensor};

/// Images used for activation calibration when none are given explicitly.
pub const DEFAULT_CALIBRATION_SIZE: usize = 100;

const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    /// Affine int8 weights, float activations.
    Dynamic,
    /// Affine uint8 weights and activations.
    FullUint8,
    /// Symmetric int8 weights; activations in [-128, 127] with zero-point 0.
    FullInt8,
    /// Weights rounded to the nearest half-precision value.
    Float16,
}

impl QuantMode {
    pub fn name(self) -> &'static str {
        match self {
            QuantMode::Dynamic => "dyn",
            QuantMode::FullUint8 => "uint8",
            QuantMode::FullInt8 => "int8",
            QuantMode::Float16 => "f16",
        }
    }

    pub fn needs_calibration(self) -> bool {
        matches!(self, QuantMode::FullUint8 | QuantMode::FullInt8)
    }
}

/// `real = (q - zero_point) · scale`, with `q ∈ [qmin, qmax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub qmin: i32,
    pub qmax: i32,
}

fn step(min: f64, max: f64, levels: i32) -> f64 {
    let s = (max - min) / f64::from(levels);
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

impl QuantParams {
    /// Affine parameters covering `[min, max]` (widened to contain 0) with
    /// an integer zero-point. The nudged grid is off by at most half a step
    /// at either end.
    pub fn affine(min: f64, max: f64, qmin: i32, qmax: i32) -> Self {
        let (min, max) = (min.min(0.0), max.max(0.0));
        let scale = step(min, max, qmax - qmin);
        let zero_point = (f64::from(qmin) - min / scale)
            .round()
            .clamp(f64::from(qmin), f64::from(qmax)) as i32;
        Self {
            scale,
            zero_point,
            qmin,
            qmax,
        }
    }

    /// `max|x| / 127` on [-127, 127].
    pub fn symmetric(max_abs: f64) -> Self {
        Self {
            scale: step(0.0, max_abs, 127),
            zero_point: 0,
            qmin: -127,
            qmax: 127,
        }
    }

    /// The affine 8-bit step for `[min, max]` applied on [-128, 127] with
    /// the zero-point pinned to 0: only `[-128·s, 127·s]` is representable,
    /// roughly half of a nonnegative range.
    pub fn zero_pinned(min: f64, max: f64) -> Self {
        let (min, max) = (min.min(0.0), max.max(0.0));
        Self {
            scale: step(min, max, 255),
            zero_point: 0,
            qmin: -128,
            qmax: 127,
        }
    }

    pub fn quantize(&self, x: f64) -> i32 {
        ((x / self.scale).round() + f64::from(self.zero_point)).clamp(f64::from(self.qmin), f64::from(self.qmax)) as i32
    }

    pub fn dequantize(&self, q: i32) -> f64 {
        f64::from(q - self.zero_point) * self.scale
    }

    pub fn fake_quant(&self, x: f64) -> f64 {
        self.dequantize(self.quantize(x))
    }
}

/// Round-to-nearest-even half precision. `f16::from_f64` may round through
/// `f32` first, which can land on the wrong side of a tie; the neighbours
/// of its result are checked directly.
pub fn nearest_half(w: f64) -> f16 {
    let h = f16::from_f64(w);
    if !h.is_finite() || !w.is_finite() {
        return h;
    }
    let bits = h.to_bits();
    let mut best = h;
    for cand in [bits.wrapping_sub(1), bits.wrapping_add(1)] {
        let c = f16::from_bits(cand);
        // stay within the same sign and away from inf/NaN
        if !c.is_finite() || (c.to_f64() * h.to_f64()) < 0.0 {
            continue;
        }
        let (dc, db) = ((c.to_f64() - w).abs(), (best.to_f64() - w).abs());
        if dc < db || (dc == db && cand & 1 == 0) {
            best = c;
        }
    }
    best
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightPayload {
    Int { params: QuantParams, values: Vec<i32> },
    Half { bits: Vec<u16> },
}

impl WeightPayload {
    pub fn encode(mode: QuantMode, weights: &[f64]) -> Self {
        let (lo, hi) = min_max(weights);
        let params = match mode {
            QuantMode::Float16 => {
                return WeightPayload::Half {
                    bits: weights.iter().map(|&w| nearest_half(w).to_bits()).collect(),
                }
            }
            QuantMode::Dynamic => QuantParams::affine(lo, hi, -128, 127),
            QuantMode::FullUint8 => QuantParams::affine(lo, hi, 0, 255),
            QuantMode::FullInt8 => QuantParams::symmetric(lo.abs().max(hi.abs())),
        };
        WeightPayload::Int {
            params,
            values: weights.iter().map(|&w| params.quantize(w)).collect(),
        }
    }

    pub fn decode(&self) -> Vec<f64> {
        match self {
            WeightPayload::Int { params, values } => values.iter().map(|&q| params.dequantize(q)).collect(),
            WeightPayload::Half { bits } => bits.iter().map(|&b| f16::from_bits(b).to_f64()).collect(),
        }
    }
}

/// A model with quantized weights and, for the full modes, per-boundary
/// activation grids.
#[derive(Debug, Clone)]
pub struct QuantizedModel {
    mode: QuantMode,
    /// Layer index → weight payload, for layers with parameters.
    payloads: Vec<(usize, WeightPayload)>,
    /// Boundary `i` is the input of layer `i`; the last entry is the output.
    activations: Option<Vec<QuantParams>>,
    model: Model,
}

impl QuantizedModel {
    pub fn mode(&self) -> QuantMode {
        self.mode
    }

    pub fn payloads(&self) -> &[(usize, WeightPayload)] {
        &self.payloads
    }

    pub fn activation_params(&self) -> Option<&[QuantParams]> {
        self.activations.as_deref()
    }

    /// The float model carrying the dequantized weights.
    pub fn dequantized(&self) -> &Model {
        &self.model
    }

    /// Rebuilds from a dequantized model and stored activation grids (as
    /// written by the CLI). The weight payloads are re-derived from the
    /// dequantized values.
    pub fn from_parts(mode: QuantMode, model: Model, activations: Option<Vec<QuantParams>>) -> Result<Self> {
        let expected = model.layers().len() + 1;
        match (&activations, mode.needs_calibration()) {
            (Some(a), true) if a.len() == expected => {}
            (None, false) => {}
            _ => {
                return Err(MixerError::Config(format!(
                    "{} mode needs {} activation grids",
                    mode.name(),
                    if mode.needs_calibration() { expected } else { 0 }
                )))
            }
        }
        Ok(Self {
            mode,
            payloads: encode_weights(&model, mode),
            activations,
            model,
        })
    }

    fn forward_chunk(&self, batch: &Tensor, grids: &[QuantParams]) -> Result<Tensor> {
        let fq = |t: Tensor, p: &QuantParams| -> Result<Tensor> {
            let shape = t.shape().to_vec();
            Tensor::new(shape, t.into_data().into_iter().map(|v| p.fake_quant(v)).collect())
        };
        let mut x = fq(batch.clone(), &grids[0])?;
        for (i, layer) in self.model.layers().iter().enumerate() {
            x = fq(layer.forward(&x)?, &grids[i + 1])?;
            if !x.all_finite() {
                return Err(MixerError::Numeric {
                    layer: i,
                    stage: "quantized forward",
                });
            }
        }
        Ok(x)
    }
}

fn encode_weights(model: &Model, mode: QuantMode) -> Vec<(usize, WeightPayload)> {
    model
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.params().map(|(w, _)| (i, WeightPayload::encode(mode, w.data()))))
        .collect()
}

/// Quantizes a copy of `model`. The full integer modes need a calibration
/// batch to fix the activation ranges of every layer boundary.
pub fn quantize(model: &Model, mode: QuantMode, calibration: Option<&Tensor>) -> Result<QuantizedModel> {
    let payloads = encode_weights(model, mode);
    let mut deq = model.clone();
    for (i, payload) in &payloads {
        let (w, _) = deq.layers_mut()[*i]
            .params_mut()
            .expect("payload layers have parameters");
        w.data_mut().copy_from_slice(&payload.decode());
    }
    let activations = if mode.needs_calibration() {
        let calib = calibration
            .ok_or_else(|| MixerError::Config(format!("{} quantization needs a calibration set", mode.name())))?;
        if calib.rows() == 0 {
            return Err(MixerError::Config("empty calibration set".into()));
        }
        let boundaries = model.forward_boundaries(calib)?;
        Some(
            boundaries
                .iter()
                .map(|t| {
                    let (lo, hi) = min_max(t.data());
                    match mode {
                        QuantMode::FullUint8 => QuantParams::affine(lo, hi, 0, 255),
                        _ => QuantParams::zero_pinned(lo, hi),
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(QuantizedModel {
        mode,
        payloads,
        activations,
        model: deq,
    })
}

impl Classifier for QuantizedModel {
    fn input_shape(&self) -> &[usize] {
        self.model.input_shape()
    }

    fn class_count(&self) -> usize {
        self.model.class_count()
    }

    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        let Some(grids) = &self.activations else {
            return self.model.forward(batch);
        };
        self.model.check_input(batch)?;
        let classes = self.model.class_count();
        let idx: Vec<usize> = (0..batch.rows()).collect();
        let mut data = Vec::with_capacity(batch.rows() * classes);
        for chunk in idx.chunks(CHUNK) {
            data.extend(self.forward_chunk(&batch.select_rows(chunk), grids)?.into_data());
        }
        Tensor::new(vec![batch.rows(), classes], data)
    }
}
