//! exprspot: facial micro- and macro-expression spotting on long videos.
//!
//! The pipeline compares each frame against two temporally offset reference
//! frames through a shared-weight two-stream 3D-CNN, trained from scratch
//! under leave-one-subject-out cross-validation, and converts per-frame
//! scores into expression intervals scored by IoU-based F1.
//!
//! Crate layout mirrors the pipeline stages:
//!
//! - [`tensor`] — dense tensors, the fixed layer vocabulary, reverse-mode
//!   gradients, SGD, gradient audits
//! - [`preprocess`] — local contrast normalisation and augmentation
//! - [`dataset`] — manifests, frame labels, skip computation, LOSO splits,
//!   window sampling
//! - [`model`] — the two-stream network, per-video scoring, Grad-CAM
//! - [`trainer`] — the LOSO training driver
//! - [`eval`] — smoothing, thresholding, interval extraction and matching
//! - [`synth`] — deterministic synthetic long-video generator
//! - [`cli`] — the `exprspot` command-line front end

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
