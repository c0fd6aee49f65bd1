use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Cache, Layer, ParamGrads};
use super::loss::PROB_FLOOR;
use super::optim::Optimizer;
use super::tensor::Tensor;
use crate::error::{MixerError, Result};

/// Largest batch pushed through a single inference pass; bigger inputs are
/// processed in chunks to bound the im2col buffers.
const INFERENCE_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Training,
    Inference,
}

/// Storage precision of the trainable parameters. Compute always runs in
/// `f64`; in `F32` mode parameters are rounded to single precision after
/// initialisation and after every optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: String,
    input_shape: Vec<usize>,
    classes: usize,
    layers: Vec<Layer>,
    mode: Mode,
    precision: Precision,
}

/// Anything that maps a batch of images to class probabilities. Implemented
/// by plain models and by attacked wrappers (quantized, input-filtered).
pub trait Classifier: Sync {
    fn input_shape(&self) -> &[usize];
    fn class_count(&self) -> usize;
    /// Class probabilities, one row per input.
    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor>;

    fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.predict_proba(batch)?.argmax_rows())
    }
}

impl Model {
    pub fn new(
        arch: impl Into<String>,
        input_shape: Vec<usize>,
        classes: usize,
        layers: Vec<Layer>,
        precision: Precision,
    ) -> Result<Self> {
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        if shape != [classes] {
            return Err(MixerError::Config(format!(
                "final layer produces {shape:?}, expected [{classes}]"
            )));
        }
        let mut model = Self {
            arch: arch.into(),
            input_shape,
            classes,
            layers,
            mode: Mode::Inference,
            precision,
        };
        model.round_to_storage();
        Ok(model)
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Number of trainable weights, biases excluded.
    pub fn weight_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, _)| w.len())
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    pub fn round_to_storage(&mut self) {
        if self.precision == Precision::F32 {
            for (w, b) in self.layers.iter_mut().filter_map(|l| l.params_mut()) {
                for v in w.data_mut().iter_mut().chain(b.data_mut().iter_mut()) {
                    *v = *v as f32 as f64;
                }
            }
        }
    }

    pub fn check_input(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![batch.shape().first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.input_shape);
            return Err(MixerError::InputShape {
                expected,
                actual: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Inference-mode forward pass (dropout disabled), returning class
    /// probabilities of shape `[batch, classes]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        if batch.rows() <= INFERENCE_CHUNK {
            return self.forward_chunk(batch);
        }
        let mut data = Vec::with_capacity(batch.rows() * self.classes);
        let idx: Vec<usize> = (0..batch.rows()).collect();
        for chunk in idx.chunks(INFERENCE_CHUNK) {
            data.extend(self.forward_chunk(&batch.select_rows(chunk))?.into_data());
        }
        Tensor::new(vec![batch.rows(), self.classes], data)
    }

    fn forward_chunk(&self, batch: &Tensor) -> Result<Tensor> {
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if !x.all_finite() {
                return Err(MixerError::Numeric {
                    layer: i,
                    stage: "forward",
                });
            }
        }
        Ok(x)
    }

    /// Inference pass exposing every layer boundary: element 0 is the
    /// input, element `i + 1` the output of layer `i`.
    pub fn forward_boundaries(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(batch)?;
        let mut out = vec![batch.clone()];
        for layer in &self.layers {
            let next = layer.forward(out.last().expect("non-empty"))?;
            out.push(next);
        }
        Ok(out)
    }

    /// Mean soft-target cross-entropy over the batch and its parameter
    /// gradients, without touching the parameters.
    pub fn loss_and_grads(
        &self,
        batch: &Tensor,
        targets: &Tensor,
        rng: &mut ChaCha20Rng,
    ) -> Result<(f64, Vec<Option<ParamGrads>>)> {
        self.check_input(batch)?;
        if targets.shape() != [batch.rows(), self.classes] {
            return Err(MixerError::InputShape {
                expected: vec![batch.rows(), self.classes],
                actual: targets.shape().to_vec(),
            });
        }
        let mut caches: Vec<Cache> = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer.forward_train(&x, rng)?;
            if !out.all_finite() {
                return Err(MixerError::Numeric {
                    layer: i,
                    stage: "forward",
                });
            }
            caches.push(cache);
            x = out;
        }
        let n = batch.rows() as f64;
        let probs = x;
        let loss: f64 = probs
            .data()
            .iter()
            .zip(targets.data())
            .map(|(p, t)| if *t == 0.0 { 0.0 } else { -t * p.max(PROB_FLOOR).ln() })
            .sum::<f64>()
            / n;

        // With a trailing softmax the gradient w.r.t. the logits is (p - t) / n,
        // which stays exact where the generic -t/p route would underflow.
        let fused = matches!(self.layers.last(), Some(Layer::Softmax));
        let mut grad = if fused {
            let data = probs
                .data()
                .iter()
                .zip(targets.data())
                .map(|(p, t)| (p - t) / n)
                .collect();
            Tensor::new(probs.shape().to_vec(), data)?
        } else {
            let data = probs
                .data()
                .iter()
                .zip(targets.data())
                .map(|(p, t)| -t / p.max(PROB_FLOOR) / n)
                .collect();
            Tensor::new(probs.shape().to_vec(), data)?
        };
        let top = if fused {
            self.layers.len() - 1
        } else {
            self.layers.len()
        };
        let mut grads: Vec<Option<ParamGrads>> = vec![None; self.layers.len()];
        for i in (0..top).rev() {
            let (dx, pg) = self.layers[i].backward(&caches[i], &grad)?;
            if let Some(pg) = &pg {
                if pg.weight.iter().chain(&pg.bias).any(|v| !v.is_finite()) {
                    return Err(MixerError::Numeric {
                        layer: i,
                        stage: "backward",
                    });
                }
            }
            if !dx.all_finite() {
                return Err(MixerError::Numeric {
                    layer: i,
                    stage: "backward",
                });
            }
            grads[i] = pg;
            grad = dx;
        }
        Ok((loss, grads))
    }

    /// One optimizer step on a batch; returns the mean batch loss.
    pub fn backward_and_step(
        &mut self,
        batch: &Tensor,
        targets: &Tensor,
        opt: &mut Optimizer,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64> {
        if self.mode != Mode::Training {
            return Err(MixerError::Config(
                "model must be in training mode to take a step".into(),
            ));
        }
        let (loss, grads) = self.loss_and_grads(batch, targets, rng)?;
        opt.begin_step();
        let mut slot = 0;
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            if let (Some((w, b)), Some(g)) = (layer.params_mut(), g) {
                opt.update(slot, w.data_mut(), &g.weight);
                opt.update(slot + 1, b.data_mut(), &g.bias);
                slot += 2;
            }
        }
        self.round_to_storage();
        Ok(loss)
    }

    /// One pass over `(images, targets)` in a freshly shuffled order.
    /// Returns the sample-weighted mean loss.
    pub fn train_epoch(
        &mut self,
        images: &Tensor,
        targets: &Tensor,
        opt: &mut Optimizer,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64> {
        let n = images.rows();
        if targets.rows() != n {
            return Err(MixerError::InputShape {
                expected: vec![n, self.classes],
                actual: targets.shape().to_vec(),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(opt.config().batch_size) {
            let xb = images.select_rows(chunk);
            let yb = targets.select_rows(chunk);
            total += self.backward_and_step(&xb, &yb, opt, rng)? * chunk.len() as f64;
        }
        Ok(total / n as f64)
    }
}

impl Classifier for Model {
    fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn predict_proba(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::layer::{Activation, Dense};
    use crate::tensornet::optim::OptimizerConfig;
    use rand::SeedableRng;

    fn identity_dense(n: usize) -> Model {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut dense = Dense::new(n, n, Activation::Linear, &mut rng);
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        dense.weight = Tensor::new(vec![n, n], w).unwrap();
        Model::new(
            "identity",
            vec![n],
            n,
            vec![Layer::Dense(dense), Layer::Softmax],
            Precision::F64,
        )
        .unwrap()
    }

    #[test]
    fn identity_dense_is_softmax_of_input() {
        let model = identity_dense(3);
        let logits = [0.5, -1.0, 2.0];
        let out = model
            .forward(&Tensor::new(vec![1, 3], logits.to_vec()).unwrap())
            .unwrap();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        for (o, l) in out.data().iter().zip(logits) {
            assert!((o - l.exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let model = identity_dense(3);
        let err = model.forward(&Tensor::zeros(vec![2, 4])).unwrap_err();
        assert!(matches!(err, MixerError::InputShape { .. }));
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let model = identity_dense(2);
        let x = Tensor::new(vec![1, 2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(model.forward(&x), Err(MixerError::Numeric { layer: 0, .. })));
    }

    #[test]
    fn step_requires_training_mode() {
        let mut model = identity_dense(2);
        let mut opt = Optimizer::new(OptimizerConfig::adam(1)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = Tensor::zeros(vec![1, 2]);
        let y = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        assert!(model.backward_and_step(&x, &y, &mut opt, &mut rng).is_err());
        model.set_mode(Mode::Training);
        assert!(model.backward_and_step(&x, &y, &mut opt, &mut rng).is_ok());
    }

    #[test]
    fn f32_precision_rounds_parameters() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let dense = Dense::new(4, 2, Activation::Linear, &mut rng);
        let model = Model::new(
            "m",
            vec![4],
            2,
            vec![Layer::Dense(dense), Layer::Softmax],
            Precision::F32,
        )
        .unwrap();
        let (w, _) = model.layers()[0].params().unwrap();
        assert!(w.data().iter().all(|v| *v == (*v as f32) as f64));
    }
}
