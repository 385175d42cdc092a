//! Ultrasonic hazard detection: synthetic sources, microphone-array scenes,
//! delay-and-sum beamforming, spectrogram features, an Inception-style CNN
//! and the evaluation harness around them.

mod error;

pub mod beamform;
pub mod config;
pub mod dsp;
pub mod eval;
pub mod features;
pub mod nn;
pub mod scene;
pub mod synth;
pub mod wav;

pub use error::{Error, Result};
