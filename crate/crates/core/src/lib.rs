//! Zero-shot multi-speaker singing voice synthesis.
//!
//! The pipeline is split into the pieces an operator touches:
//!
//! - [`corpus`]: utterance data model, on-disk layout, alignment ingestion
//!   and the synthetic toy-singer generator.
//! - [`signal`]: mel extraction, f0 estimation, voiced statistics and
//!   Griffin-Lim inversion.
//! - [`acoustic_model`]: phoneme encoder, length regulator, pitch encoder
//!   and mel decoder.
//! - [`speaker_encoders`]: the frozen fixed-size encoder and the trainable
//!   multi-head multi-reference encoder.
//! - [`pitch_shift`]: voiced-mean pitch normalization used at inference.
//! - [`vocoder`]: pitch-aware vocoder conditioning and waveform backends.
//! - [`training`]: AdamW, the warmup schedule, batching, checkpoints and
//!   objective metrics.
//!
//! Everything numeric runs on a small reverse-mode autodiff engine in
//! [`autodiff`] over `f64` matrices.

pub mod acoustic_model;
pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod mrsv;
pub mod nn;
pub mod pitch_shift;
pub mod signal;
pub mod speaker_encoders;
pub mod synth;
pub mod training;
pub mod vocoder;
pub mod wav;

pub use error::{Error, Result};
