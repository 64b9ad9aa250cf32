//! FM-CW radar vehicle classification.
//!
//! The crate covers the whole chain from beat-signal physics to a trained
//! classifier:
//!
//! - [`radar_model`]: triangular FM-CW modulation, beat frequencies and a
//!   baseband simulator for single-vehicle passes.
//! - [`spectrogram`]: per-ramp FFT moduli, up/down spectrograms and the
//!   fixed-shape three-channel range-Doppler tensor.
//! - [`dataset`]: synthetic dataset generation, the `.rdt` tensor format,
//!   stratified fold splits and class-balanced batches.
//! - [`network`]: an AlexNet-style convolutional network written from scratch,
//!   with SGD, dropout, response normalization and the `.rdw` weights format.
//! - [`evaluation`]: per-fold training, confusion matrices and cross-validation
//!   reports.

pub mod class;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod radar_model;
pub mod spectrogram;

pub use class::VehicleClass;
pub use error::{Error, Result};
