//! Adversarially robust SAR-like image classification, end to end and
//! self-contained: a reverse-mode autodiff tensor core, a synthetic scene
//! generator with speckle noise, gradient-based attacks (FGSM, PGD, and a
//! target-region scatterer attack), a supervised contrastive pre-training
//! objective, and the training/evaluation pipeline tying them together.

pub mod attacks;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
