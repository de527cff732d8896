//! Fairness triggers for frozen classifiers.
//!
//! The crate trains an input-appended "fairness trigger" against a frozen
//! feed-forward classifier under a min-max adversarial objective, measures
//! demographic parity / equalized odds bias, and verifies the underlying
//! information-theoretic mechanism on an exact discrete generative model.
//!
//! Modules:
//! - [`autodiff`]: reverse-mode differentiation over dense tensors
//! - [`optim`]: Adam
//! - [`model`]: feed-forward classifier / discriminator with save/load
//! - [`trigger`]: trigger parameterizations and their application rules
//! - [`fairness`]: bias metrics and fairness losses
//! - [`data`]: labeled datasets, synthetic generation, CSV I/O
//! - [`train`]: base / adversarial / reprogramming loops and sweeps
//! - [`theory`]: exact discrete generative model and mutual-information checks
//! - [`probe`]: demographic probe on null inputs
//! - [`config`] / [`experiment`]: run configuration and protocol orchestration

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fairness;
pub mod model;
pub mod optim;
pub mod probe;
pub mod theory;
pub mod train;
pub mod trigger;

pub use autodiff::{Tape, Tensor};
pub use error::{Error, Result};

/// Derives a purpose-specific seed from a run seed, so that independent
/// random streams (init, shuffling, direction sampling) never overlap.
pub fn mix_seed(seed: u64, tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
