//! Robust speaker verification toolkit.
//!
//! The crate is organized along the processing chain of a text-independent
//! speaker verification system:
//!
//! - [`dsp`] — audio I/O and signal/feature primitives (STFT, MFCC, VAD,
//!   A-weighting, FIR filtering),
//! - [`augment`] — controlled corruption of speech with noise and room
//!   impulse responses at calibrated SNR, plus corpus manifest tooling,
//! - [`enhancer`] — a denoising autoencoder mapping corrupted log-magnitude
//!   spectra back to clean speech,
//! - [`embeddings`] — GMM-UBM/i-vector and TDNN x-vector utterance
//!   embeddings with LDA and length normalization,
//! - [`plda`] — PLDA back-end training and log-likelihood-ratio trial
//!   scoring,
//! - [`metrics`] — EER, minDCF and DET-curve evaluation,
//! - [`experiment`] — configuration and the batch experiment driver used
//!   by the CLI.

pub mod augment;
pub mod container;
pub mod dsp;
pub mod embeddings;
pub mod enhancer;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod plda;

pub use error::{Error, Result};
