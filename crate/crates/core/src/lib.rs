//! Weakly supervised segmentation of laser-induced damage in dark-field
//! images.
//!
//! A small VGG-style classifier is trained on image-level labels only.
//! Class activation maps taken from its stages (Grad-CAM, LayerCAM and a
//! continuous-gradient variant) are fused across scales, gated by a
//! deep-layer mask, thresholded with a local Sauvola rule, and scored with
//! pixel- and region-level metrics. [`synth`] generates labelled synthetic
//! imagery so everything runs without a private dataset.

pub mod cam;
pub mod classifier;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod grid;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod postprocess;
mod rate;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::{Grid, Mask, Plane};
