//! Acoustic pulse-wave pipeline for atrial fibrillation screening.
//!
//! A smartphone plays four near-ultrasonic carriers against the wrist; the
//! radial pulse modulates their phase. This crate simulates that channel,
//! recovers per-carrier pulse waves, gates them on quality, purifies the
//! best one and provides the evaluation harness for the detector.

pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod io;
pub mod probe;
pub mod purification;
pub mod quality;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};
pub use signal::{
    AudioBuffer, ChannelRecord, IqSeries, MultiChannelRecord, PhaseSeries, Rhythm, AUDIO_RATE, SEGMENT_LEN,
    SEGMENT_SECONDS, WORKING_RATE,
};
