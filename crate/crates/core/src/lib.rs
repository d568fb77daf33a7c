//! Causal single-channel speech enhancement with a recurrent per-frame gain.
//!
//! The crate is organized as a pipeline:
//!
//! - [`dsp`]: streaming STFT analysis, gain application, overlap-add synthesis
//! - [`features`]: log power spectra and input normalization schemes
//! - [`model`]: the stacked GRU gain predictor
//! - [`training`]: losses, voice activity masking, backprop, Adam, batching
//! - [`data`]: level normalization, SNR mixing, dataset assembly
//! - [`metrics`]: SI-SDR, cepstral distance, oracle references
//! - [`enhance`]: end-to-end streaming enhancer tying the pieces together
//! - [`checkpoint`]: self-contained binary model snapshots
//! - [`wav`]: 16 kHz mono WAV input/output

pub mod checkpoint;
pub mod data;
pub mod dsp;
pub mod enhance;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod training;
pub mod wav;

pub use error::{Error, Result};
