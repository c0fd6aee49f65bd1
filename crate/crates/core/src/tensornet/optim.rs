use serde::{Deserialize, Serialize};

use crate::error::{MixerError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// Used by SGD only; Adam runs with its fixed default moments.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl OptimizerConfig {
    /// Adam with lr = 0.001, batch 64 (the MNIST recipe).
    pub fn adam(epochs: usize) -> Self {
        Self {
            algorithm: Algorithm::Adam,
            learning_rate: 1e-3,
            momentum: 0.0,
            batch_size: 64,
            epochs,
        }
    }

    /// SGD with lr = 0.001 and momentum 0.9, batch 64 (the CIFAR10 recipe).
    pub fn sgd(epochs: usize) -> Self {
        Self {
            algorithm: Algorithm::SgdMomentum,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // zero is allowed so that a null step can be expressed
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(MixerError::Config(format!(
                "learning rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(MixerError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(MixerError::Config("batch size and epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Optimizer state: one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: u64,
    state: Vec<Moments>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            steps: 0,
            state: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub(crate) fn begin_step(&mut self) {
        self.steps += 1;
    }

    /// Updates one parameter tensor in place. `slot` identifies the tensor
    /// so that its moments persist across steps.
    pub(crate) fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        while self.state.len() <= slot {
            self.state.push(Moments {
                first: Vec::new(),
                second: Vec::new(),
            });
        }
        let st = &mut self.state[slot];
        if st.first.len() != params.len() {
            st.first = vec![0.0; params.len()];
            st.second = vec![0.0; params.len()];
        }
        let lr = self.config.learning_rate;
        match self.config.algorithm {
            Algorithm::SgdMomentum => {
                let mu = self.config.momentum;
                for ((p, g), v) in params.iter_mut().zip(grads).zip(st.first.iter_mut()) {
                    *v = mu * *v - lr * g;
                    *p += *v;
                }
            }
            Algorithm::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(st.first.iter_mut())
                    .zip(st.second.iter_mut())
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_momentum() {
        let mut cfg = OptimizerConfig::sgd(1);
        cfg.momentum = 1.0;
        assert!(cfg.validate().is_err());
        cfg.momentum = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(1)).unwrap();
        let mut p = vec![1.0, -1.0];
        opt.begin_step();
        opt.update(0, &mut p, &[0.5, -2.0]);
        // bias-corrected first step is lr * sign(g) up to epsilon
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1)).unwrap();
        let mut p = vec![0.0];
        opt.begin_step();
        opt.update(0, &mut p, &[1.0]);
        opt.begin_step();
        opt.update(0, &mut p, &[1.0]);
        // v1 = -0.001, v2 = 0.9 * -0.001 - 0.001
        assert!((p[0] - (-0.001 - 0.0019)).abs() < 1e-15);
    }
}
