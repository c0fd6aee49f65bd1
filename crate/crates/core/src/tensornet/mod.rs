//! Minimal trainable CNN engine: tensors, layers, losses, optimizers and the
//! two reference architectures.

pub mod arch;
pub mod format;
pub mod layer;
mod linalg;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;

pub use arch::{build_architecture, build_mlp, Architecture};
pub use format::{decode_model, encode_model, load_model, save_model};
pub use layer::{Activation, Conv2d, Dense, Layer, Padding};
pub use loss::cross_entropy_soft;
pub use model::{Classifier, Mode, Model, Precision};
pub use optim::{Algorithm, Optimizer, OptimizerConfig};
pub use tensor::{argmax, Tensor};
