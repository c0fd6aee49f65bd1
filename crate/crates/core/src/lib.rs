//! Mixup-trigger watermarking for image classifiers.
//!
//! The owner trains a classifier on a small set of secret mixup images
//! (weighted blends of random class exemplars plus a visible overlay) labelled
//! with a secret soft label. Ownership is later verified in a black-box
//! fashion by querying freshly synthesised blends and counting how often the
//! model answers the key's class.

pub mod attacks;
pub mod bench;
pub mod dataio;
pub mod embed;
pub mod error;
pub mod keygen;
pub mod rng;
pub mod tensornet;
pub mod trigger;
pub mod verify;

pub use error::{MixerError, Result};
