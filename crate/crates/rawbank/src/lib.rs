//! Trainable raw-waveform acoustic front-end.
//!
//! A bank of cosine-modulated Gaussian band-pass kernels, parameterized
//! only by their center frequencies, runs directly on framed waveform
//! samples. A small self-attention network weighs the resulting sub-band
//! energies per context window, a soft variance-gated normalization
//! suppresses near-stationary bands, and a dense classifier head makes
//! the whole stack trainable end-to-end with hand-written reverse-mode
//! gradients. Includes synthetic-task generation, a training loop,
//! finite-difference gradient verification, and the diagnostic reports
//! (center-frequency tables, attention/energy profiles, staged feature
//! dumps) used to inspect what the filters learned.

pub mod analysis;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod dsp;
pub mod error;
pub mod filterbank;
pub mod formats;
pub mod gradcheck;
pub mod mat;
pub mod model;
mod seeds;
pub mod signal;
pub mod trainer;
pub mod wav;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use error::{Error, Result};
