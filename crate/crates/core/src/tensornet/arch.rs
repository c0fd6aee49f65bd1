use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Activation, Conv2d, Dense, Layer, Padding};
use super::model::{Model, Precision};
use crate::error::{MixerError, Result};

/// The two reference CNNs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    MnistCnn,
    Cifar10Cnn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::MnistCnn => "mnist_cnn",
            Architecture::Cifar10Cnn => "cifar10_cnn",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = MixerError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist_cnn" => Ok(Architecture::MnistCnn),
            "cifar10_cnn" => Ok(Architecture::Cifar10Cnn),
            other => Err(MixerError::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Builds a freshly initialised model.
///
/// `mnist_cnn`: conv64(k5) → maxpool → conv128(k5) → maxpool → dense256 →
/// dense(C) → softmax, unpadded convolutions.
///
/// `cifar10_cnn`: four blocks of two 3×3 same-padded convolutions
/// (32, 64, 128, 256 filters), each followed by 2×2 max pooling and dropout
/// 0.2; then dense128 → dropout 0.2 → dense256 → dense(C) → softmax.
pub fn build_architecture(
    arch: Architecture,
    input_shape: &[usize],
    classes: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Model> {
    if input_shape.len() != 3 || classes < 2 {
        return Err(MixerError::Config(format!(
            "{arch} needs an H×W×C input and at least two classes, got {input_shape:?} / {classes}"
        )));
    }
    let channels = input_shape[2];
    let mut layers = Vec::new();
    let mut shape = input_shape.to_vec();
    let mut push = |layer: Layer, layers: &mut Vec<Layer>| -> Result<()> {
        shape = layer.output_shape(&shape)?;
        layers.push(layer);
        Ok(())
    };
    match arch {
        Architecture::MnistCnn => {
            push(
                Layer::Conv2d(Conv2d::new(channels, 64, 5, Padding::Valid, Activation::Relu, rng)),
                &mut layers,
            )?;
            push(Layer::MaxPool2d { window: 2 }, &mut layers)?;
            push(
                Layer::Conv2d(Conv2d::new(64, 128, 5, Padding::Valid, Activation::Relu, rng)),
                &mut layers,
            )?;
            push(Layer::MaxPool2d { window: 2 }, &mut layers)?;
            push(Layer::Flatten, &mut layers)?;
            let flat = layers_output_len(&layers, input_shape)?;
            push(Layer::Dense(Dense::new(flat, 256, Activation::Relu, rng)), &mut layers)?;
            push(
                Layer::Dense(Dense::new(256, classes, Activation::Linear, rng)),
                &mut layers,
            )?;
            push(Layer::Softmax, &mut layers)?;
        }
        Architecture::Cifar10Cnn => {
            let mut in_ch = channels;
            for filters in [32, 64, 128, 256] {
                for _ in 0..2 {
                    push(
                        Layer::Conv2d(Conv2d::new(in_ch, filters, 3, Padding::Same, Activation::Relu, rng)),
                        &mut layers,
                    )?;
                    in_ch = filters;
                }
                push(Layer::MaxPool2d { window: 2 }, &mut layers)?;
                push(Layer::Dropout { rate: 0.2 }, &mut layers)?;
            }
            push(Layer::Flatten, &mut layers)?;
            let flat = layers_output_len(&layers, input_shape)?;
            push(Layer::Dense(Dense::new(flat, 128, Activation::Relu, rng)), &mut layers)?;
            push(Layer::Dropout { rate: 0.2 }, &mut layers)?;
            push(Layer::Dense(Dense::new(128, 256, Activation::Relu, rng)), &mut layers)?;
            push(
                Layer::Dense(Dense::new(256, classes, Activation::Linear, rng)),
                &mut layers,
            )?;
            push(Layer::Softmax, &mut layers)?;
        }
    }
    Model::new(arch.name(), input_shape.to_vec(), classes, layers, Precision::F32)
}

fn layers_output_len(layers: &[Layer], input_shape: &[usize]) -> Result<usize> {
    let mut shape = input_shape.to_vec();
    for l in layers {
        shape = l.output_shape(&shape)?;
    }
    Ok(shape.iter().product())
}

/// Small fully connected network (ReLU hidden layers, softmax head), used
/// for tests and quick experiments.
pub fn build_mlp(
    inputs: usize,
    hidden: &[usize],
    classes: usize,
    precision: Precision,
    rng: &mut ChaCha20Rng,
) -> Result<Model> {
    let mut layers = Vec::new();
    let mut width = inputs;
    for &h in hidden {
        layers.push(Layer::Dense(Dense::new(width, h, Activation::Relu, rng)));
        width = h;
    }
    layers.push(Layer::Dense(Dense::new(width, classes, Activation::Linear, rng)));
    layers.push(Layer::Softmax);
    Model::new("mlp", vec![inputs], classes, layers, precision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::tensor::Tensor;
    use rand::SeedableRng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(5)
    }

    #[test]
    fn mnist_layer_stack() {
        let m = build_architecture(Architecture::MnistCnn, &[28, 28, 1], 10, &mut rng()).unwrap();
        let kinds: Vec<_> = m.layers().iter().map(|l| l.kind_name()).collect();
        assert_eq!(
            kinds,
            [
                "conv2d",
                "maxpool2d",
                "conv2d",
                "maxpool2d",
                "flatten",
                "dense",
                "dense",
                "softmax"
            ]
        );
        match (&m.layers()[0], &m.layers()[2], &m.layers()[5], &m.layers()[6]) {
            (Layer::Conv2d(c1), Layer::Conv2d(c2), Layer::Dense(d1), Layer::Dense(d2)) => {
                assert_eq!((c1.filters, c1.kernel, c1.activation), (64, 5, Activation::Relu));
                assert_eq!((c2.filters, c2.kernel, c2.activation), (128, 5, Activation::Relu));
                assert_eq!(d1.inputs, 4 * 4 * 128);
                assert_eq!(d1.units, 256);
                assert_eq!(d2.units, 10);
            }
            _ => panic!("unexpected layer kinds"),
        }
    }

    #[test]
    fn cifar_layer_stack() {
        let m = build_architecture(Architecture::Cifar10Cnn, &[32, 32, 3], 10, &mut rng()).unwrap();
        let convs: Vec<_> = m
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Conv2d(c) => Some((c.filters, c.kernel)),
                _ => None,
            })
            .collect();
        assert_eq!(
            convs,
            [
                (32, 3),
                (32, 3),
                (64, 3),
                (64, 3),
                (128, 3),
                (128, 3),
                (256, 3),
                (256, 3)
            ]
        );
        let dropouts: Vec<_> = m
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Dropout { rate } => Some(*rate),
                _ => None,
            })
            .collect();
        assert_eq!(dropouts, [0.2; 5]);
        let dense: Vec<_> = m
            .layers()
            .iter()
            .filter_map(|l| match l {
                Layer::Dense(d) => Some(d.units),
                _ => None,
            })
            .collect();
        assert_eq!(dense, [128, 256, 10]);
        // He-uniform bound for the first 3x3x3 kernel
        let (w, _) = m.layers()[0].params().unwrap();
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_image_gives_probability_vector() {
        for (arch, shape) in [
            (Architecture::MnistCnn, [28, 28, 1]),
            (Architecture::Cifar10Cnn, [32, 32, 3]),
        ] {
            let m = build_architecture(arch, &shape, 10, &mut rng()).unwrap();
            let mut s = vec![1];
            s.extend_from_slice(&shape);
            let p = m.forward(&Tensor::zeros(s)).unwrap();
            let sum: f64 = p.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.data().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn unknown_name_is_a_config_error() {
        assert!(matches!("vgg19".parse::<Architecture>(), Err(MixerError::Config(_))));
    }
}
