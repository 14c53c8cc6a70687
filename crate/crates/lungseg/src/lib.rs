//! Slice-wise lung segmentation on volumetric CT, desk scale.
//!
//! The pipeline: Hounsfield windowing and body-region cropping
//! ([`preprocess`]), a from-scratch U-net / ResU-net with exact backward
//! passes ([`tinynet`]), stratified batch sampling ([`sampler`]), training
//! augmentation ([`augment`]), native-resolution mask reconstruction and
//! cleanup ([`postprocess`]), and a volumetric metric suite with surface
//! distances and paired t-tests ([`metrics`]). Synthetic chest phantoms
//! ([`phantom`]) provide exact ground truth for end-to-end experiments.

pub mod augment;
pub mod cli;
pub mod config;
pub mod metrics;
pub mod phantom;
pub mod postprocess;
pub mod preprocess;
pub mod sampler;
pub mod tinynet;
pub mod volgrid;
