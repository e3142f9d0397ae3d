//! Parametric neural synthesis of instrumental tones.
//!
//! Recorded notes are reduced to a pitch plus a cepstrally coded spectral
//! envelope (True Amplitude Envelope over the harmonic spectrum). A
//! pitch-conditioned variational autoencoder learns the distribution of the
//! fixed-width coefficient vectors, and notes are rendered by decoding latent
//! samples and driving an additive oscillator bank.
//!
//! Pipeline, module by module:
//!
//! ```text
//! wav/dataset ─▶ analysis ─▶ envelope ─▶ model ─▶ experiments
//!                                          │
//!                                          └──▶ synthesis ─▶ wav
//! ```

pub mod analysis;
pub mod dataset;
pub mod envelope;
pub mod error;
pub mod experiments;
mod fft;
pub mod formats;
pub mod model;
pub mod pitch;
pub mod synthesis;
pub mod synthetic;
pub mod wav;

pub use error::{Error, Result};

/// Width of the padded cepstral vector fed to the networks.
pub const PAD_WIDTH: usize = 91;
