//! Zero-shot point-cloud segmentation with latent geometric prototypes.
//!
//! The pipeline trains in three stages over a synthetic corpus of primitive
//! scenes: (1) a per-point feature extractor with a seen-class classifier,
//! (2) a geometry-aware feature generator matched to real features with an
//! MMD loss plus a subsample-contrastive self-consistency term, and (3) a
//! shared visual-semantic space built by re-representing both modalities as
//! softmax distributions over a learnable prototype bank. Inference assigns
//! each point to the class whose semantic distribution is most similar to
//! the point's visual distribution, over seen and unseen classes jointly.
//!
//! Everything — tensors, reverse-mode differentiation, scene synthesis,
//! metrics, plots — is implemented here with no external dependencies, in
//! `f64`, deterministically keyed by explicit seeds.

pub mod ablate;
pub mod alignment;
pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod generator;
pub mod geometry;
pub mod lgp;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod trainer;

/// Negative-slope of the leaky-rectifier used as the hidden activation
/// throughout the model.
pub const LEAKY_SLOPE: f64 = 0.2;
