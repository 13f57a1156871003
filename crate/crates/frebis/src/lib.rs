//! Frequency-stratified neural implicit surface reconstruction.
//!
//! The pipeline maps 3-D points to banded positional encodings, runs three
//! independent MLP encoders (low/middle/high frequency), reweights the
//! resulting 256×3 feature matrix by mutual dissimilarity, decodes SDF and
//! appearance, and renders with VolSDF-style density volume rendering.
//! Training is photometric + Eikonal on synthetic posed-image datasets;
//! meshes come out via marching cubes.

pub mod config;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod field;
pub mod losses;
pub mod meshing;
pub mod metrics;
pub mod mlp;
pub mod rendering;
pub mod scenes;
pub mod tensor;
pub mod training;
pub mod weighting;

pub use error::{Error, Result};
