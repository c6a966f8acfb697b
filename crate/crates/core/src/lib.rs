//! Action-wise saliency masks for frozen vision policies.
//!
//! The crate trains a small convolutional explainer that produces one mask per
//! candidate action, using only the frozen policy as supervision, and ships the
//! tooling needed to judge such masks: perturbation baselines, fidelity
//! metrics, insertion/deletion curves and counterfactual region removal.
//!
//! Module map:
//! - [`numeric`]: dense f32 tensors, a reverse-mode tape, conv2d, Adam.
//! - [`worlds`]: synthetic beacon environment, frozen policies, datasets.
//! - [`explainer`]: the mask network and mask algebra (split, overlay).
//! - [`trainer`]: the four-term loss and the training loop.
//! - [`baselines`]: forward-only perturbation saliency methods.
//! - [`evalkit`]: fidelity, insertion/deletion AUC, counterfactuals, reports.

pub mod baselines;
#[cfg(feature = "cli")]
pub mod cli;
pub mod error;
pub mod evalkit;
pub mod explainer;
pub mod numeric;
pub mod trainer;
pub mod worlds;


pub use error::{Error, Result};
