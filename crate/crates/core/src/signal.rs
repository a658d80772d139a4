//! Sampled-signal containers shared by every stage of the chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate of every baseband stream after decimation, in Hz.
pub const WORKING_RATE: f64 = 128.0;
/// Length of one analysis segment in seconds.
pub const SEGMENT_SECONDS: f64 = 30.0;
/// Samples per analysis segment at [`WORKING_RATE`].
pub const SEGMENT_LEN: usize = 3840;
/// Capture rate of the acoustic front end.
pub const AUDIO_RATE: f64 = 48_000.0;

/// Ground-truth or predicted rhythm class. AF is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rhythm {
    #[serde(rename = "AF")]
    Af,
    #[serde(rename = "NSR")]
    Nsr,
}

impl Rhythm {
    pub fn is_af(self) -> bool {
        matches!(self, Rhythm::Af)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rhythm::Af => "AF",
            Rhythm::Nsr => "NSR",
        }
    }
}

impl std::str::FromStr for Rhythm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AF" => Ok(Rhythm::Af),
            "NSR" | "NON-AF" | "NONAF" => Ok(Rhythm::Nsr),
            other => Err(Error::Config(format!("unknown rhythm label '{other}'"))),
        }
    }
}

impl std::fmt::Display for Rhythm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Uniformly sampled mono acoustic signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    /// Alignment metadata; seconds since the start of the capture.
    pub start_time: f64,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        Self {
            samples,
            sample_rate,
            start_time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Config(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if let Some(k) = self.samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::DegenerateSignal(format!("non-finite sample at index {k}")));
        }
        Ok(())
    }

    pub fn rms(&self) -> f64 {
        crate::dsp::stats::rms(&self.samples)
    }
}

/// In-phase / quadrature components demodulated against one carrier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqSeries {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub rate: f64,
    pub carrier: f64,
}

impl IqSeries {
    pub fn new(i: Vec<f64>, q: Vec<f64>, rate: f64, carrier: f64) -> Result<Self> {
        if i.len() != q.len() {
            return Err(Error::Config(format!(
                "I and Q lengths differ ({} vs {})",
                i.len(),
                q.len()
            )));
        }
        Ok(Self { i, q, rate, carrier })
    }

    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    /// Samples as points of the I/Q plane.
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.i.iter().zip(&self.q).map(|(&i, &q)| [i, q]).collect()
    }

    pub fn from_points(points: &[[f64; 2]], rate: f64, carrier: f64) -> Self {
        Self {
            i: points.iter().map(|p| p[0]).collect(),
            q: points.iter().map(|p| p[1]).collect(),
            rate,
            carrier,
        }
    }
}

/// Unwrapped carrier phase, in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pub phase: Vec<f64>,
    pub rate: f64,
    pub carrier: f64,
}

impl PhaseSeries {
    pub fn new(phase: Vec<f64>, rate: f64, carrier: f64) -> Self {
        Self {
            phase,
            rate,
            carrier,
        }
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }
}

/// One demodulated carrier inside a [`MultiChannelRecord`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub carrier: f64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub phase: Vec<f64>,
}

impl ChannelRecord {
    pub fn invalid(carrier: f64, reason: impl Into<String>) -> Self {
        Self {
            carrier,
            valid: false,
            reason: Some(reason.into()),
            i: Vec::new(),
            q: Vec::new(),
            phase: Vec::new(),
        }
    }

    pub fn iq(&self, rate: f64) -> IqSeries {
        IqSeries {
            i: self.i.clone(),
            q: self.q.clone(),
            rate,
            carrier: self.carrier,
        }
    }

    pub fn phase_series(&self, rate: f64) -> PhaseSeries {
        PhaseSeries::new(self.phase.clone(), rate, self.carrier)
    }
}

/// Time-aligned per-carrier streams for one 30 s segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiChannelRecord {
    pub carriers: Vec<f64>,
    pub rate: f64,
    pub segment_length: usize,
    #[serde(default)]
    pub start_time: f64,
    pub channels: Vec<ChannelRecord>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

impl MultiChannelRecord {
    pub fn valid_channels(&self) -> impl Iterator<Item = (usize, &ChannelRecord)> {
        self.channels.iter().enumerate().filter(|(_, c)| c.valid)
    }

    /// Checks the shape contract every downstream consumer relies on.
    pub fn check_shape(&self) -> Result<()> {
        if self.channels.len() != self.carriers.len() {
            return Err(Error::Config(format!(
                "record lists {} carriers but holds {} channels",
                self.carriers.len(),
                self.channels.len()
            )));
        }
        if (self.rate - WORKING_RATE).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "record rate must be {WORKING_RATE} Hz, got {}",
                self.rate
            )));
        }
        for ch in self.channels.iter().filter(|c| c.valid) {
            for (name, len) in [("i", ch.i.len()), ("q", ch.q.len()), ("phase", ch.phase.len())] {
                if len != self.segment_length {
                    return Err(Error::Length {
                        found: len,
                        remedy: format!(
                            "channel {} Hz {name} must hold exactly {} samples",
                            ch.carrier, self.segment_length
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}
