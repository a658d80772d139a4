//! Multi-carrier probe synthesis and a simulated wrist acoustic channel.
//!
//! The simulator produces labelled recordings with a known cardiac phase
//! track so every later stage can be checked against ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dsp::stats;
use crate::error::{Error, Result};
use crate::signal::{AudioBuffer, PhaseSeries, Rhythm, AUDIO_RATE, SEGMENT_SECONDS};

pub const DEFAULT_CARRIERS: [f64; 4] = [18_000.0, 19_000.0, 20_000.0, 21_000.0];
pub const MIN_CARRIER: f64 = 18_000.0;
/// Carriers must stay this far below Nyquist.
pub const NYQUIST_GUARD: f64 = 1_000.0;
pub const MIN_CARRIER_SPACING: f64 = 200.0;

pub const MIN_RR: f64 = 0.3;
pub const MAX_RR: f64 = 2.0;
pub const NSR_MAX_CV: f64 = 0.1;
pub const AF_MIN_CV: f64 = 0.2;
const NSR_JITTER_CV: f64 = 0.03;
const AF_TARGET_CV: f64 = 0.25;

/// Fraction of each RR interval spent on the systolic upstroke.
pub const UPSTROKE_FRACTION: f64 = 0.3;
/// Diastolic decay constant as a fraction of the RR interval.
pub const DECAY_FRACTION: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub carriers: Vec<f64>,
    pub gains: Vec<f64>,
    pub sample_rate: f64,
    pub duration: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            carriers: DEFAULT_CARRIERS.to_vec(),
            gains: vec![0.25; 4],
            sample_rate: AUDIO_RATE,
            duration: SEGMENT_SECONDS,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Config(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.carriers.is_empty() {
            return Err(Error::Config("at least one carrier is required".into()));
        }
        if self.gains.len() != self.carriers.len() {
            return Err(Error::Config(format!(
                "{} gains given for {} carriers",
                self.gains.len(),
                self.carriers.len()
            )));
        }
        let upper = self.sample_rate / 2.0 - NYQUIST_GUARD;
        for &f in &self.carriers {
            if !(MIN_CARRIER..=upper).contains(&f) {
                return Err(Error::Config(format!(
                    "carrier {f} Hz outside [{MIN_CARRIER}, {upper}] Hz"
                )));
            }
        }
        let mut sorted = self.carriers.clone();
        sorted.sort_by(f64::total_cmp);
        for w in sorted.windows(2) {
            if w[1] - w[0] < MIN_CARRIER_SPACING {
                return Err(Error::Config(format!(
                    "carriers {} and {} Hz are closer than {MIN_CARRIER_SPACING} Hz (bandpass bands overlap)",
                    w[0], w[1]
                )));
            }
        }
        for &g in &self.gains {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!("gain {g} outside (0, 1]")));
            }
        }
        let total: f64 = self.gains.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "sum of gains {total} exceeds 1 (output would clip)"
            )));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }
}

/// Phase of `cos(2 pi f k / fs)` reduced to one cycle before scaling, so
/// long buffers keep full precision.
pub(crate) fn carrier_phase(freq: f64, k: usize, fs: f64) -> f64 {
    let cycles = freq * k as f64 / fs;
    2.0 * PI * (cycles - cycles.floor())
}

/// `S(t) = sum_i alpha_i cos(2 pi f_i t)` sampled at the probe rate.
pub fn synthesize_probe(config: &ProbeConfig) -> Result<AudioBuffer> {
    config.validate()?;
    let n = config.num_samples();
    let fs = config.sample_rate;
    let mut samples = vec![0.0; n];
    for (&f, &g) in config.carriers.iter().zip(&config.gains) {
        for (k, s) in samples.iter_mut().enumerate() {
            *s += g * carrier_phase(f, k, fs).cos();
        }
    }
    Ok(AudioBuffer::new(samples, fs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatTrain {
    pub rr_intervals: Vec<f64>,
    pub rhythm_label: Rhythm,
    pub seed: u64,
    /// Segment length the train was generated to cover, in seconds.
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl BeatTrain {
    pub fn cv(&self) -> f64 {
        stats::coefficient_of_variation(&self.rr_intervals)
    }

    pub fn beat_count(&self) -> usize {
        self.rr_intervals.len()
    }

    /// Beat onset times in seconds, starting at zero.
    pub fn onsets(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.rr_intervals
            .iter()
            .map(|rr| {
                let start = t;
                t += rr;
                start
            })
            .collect()
    }
}

pub const DEFAULT_MEAN_RR: f64 = 0.8;

pub fn generate_beat_train(rhythm: Rhythm, duration: f64, seed: u64) -> BeatTrain {
    generate_beat_train_with(rhythm, duration, DEFAULT_MEAN_RR, seed)
}

/// RR series with NSR jitter (CV about 0.03) or AF lognormal irregularity
/// (CV about 0.25). Out-of-range parameters are clamped and noted in
/// `warnings`.
pub fn generate_beat_train_with(rhythm: Rhythm, duration: f64, mean_rr: f64, seed: u64) -> BeatTrain {
    let mut warnings = Vec::new();
    let duration = if duration.is_finite() && duration > 0.0 {
        duration
    } else {
        warnings.push(format!("duration {duration} clamped to 1 s"));
        1.0
    };
    let mean_rr = if (0.4..=1.5).contains(&mean_rr) {
        mean_rr
    } else {
        let c = if mean_rr.is_finite() { mean_rr.clamp(0.4, 1.5) } else { DEFAULT_MEAN_RR };
        warnings.push(format!("mean RR {mean_rr} s clamped to {c} s"));
        c
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (1.0 + AF_TARGET_CV * AF_TARGET_CV).ln().sqrt();
    let mu = mean_rr.ln() - sigma * sigma / 2.0;

    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut rr = Vec::new();
        let mut total = 0.0;
        while total < duration {
            let z: f64 = StandardNormal.sample(rng);
            let v = match rhythm {
                Rhythm::Nsr => mean_rr * (1.0 + NSR_JITTER_CV * z),
                Rhythm::Af => (mu + sigma * z).exp(),
            }
            .clamp(MIN_RR, MAX_RR);
            total += v;
            rr.push(v);
        }
        rr
    };

    let mut rr = draw(&mut rng);
    let ok = |rr: &[f64]| {
        let cv = stats::coefficient_of_variation(rr);
        match rhythm {
            Rhythm::Nsr => cv <= NSR_MAX_CV,
            Rhythm::Af => cv >= AF_MIN_CV,
        }
    };
    let mut attempts = 1;
    while !ok(&rr) && attempts < 64 {
        rr = draw(&mut rng);
        attempts += 1;
    }
    if !ok(&rr) {
        // Rescale deviations about the mean onto the contract boundary.
        let m = stats::mean(&rr);
        let cv = stats::coefficient_of_variation(&rr);
        let target = match rhythm {
            Rhythm::Nsr => NSR_MAX_CV * 0.99,
            Rhythm::Af => AF_MIN_CV * 1.01,
        };
        let k = if cv > 0.0 { target / cv } else { 1.0 };
        for v in &mut rr {
            *v = (m + (*v - m) * k).clamp(MIN_RR, MAX_RR);
        }
        while rr.iter().sum::<f64>() < duration {
            rr.push(m);
        }
        warnings.push(format!("RR variability rescaled to CV {target:.3}"));
    }
    if attempts > 1 {
        log::debug!("beat train seed {seed}: {attempts} draws to meet the {rhythm} CV contract");
    }

    BeatTrain {
        rr_intervals: rr,
        rhythm_label: rhythm,
        seed,
        duration,
        warnings,
    }
}

/// Acoustic channel between speaker, wrist and microphone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelScenario {
    /// Peak cardiac phase deviation in radians.
    pub phase_amplitude: f64,
    /// Arc-centre displacement in demodulated I/Q units (first carrier).
    pub static_offset: [f64; 2],
    /// Rotation of the static phasor between successive carriers, radians.
    pub static_rotation: f64,
    /// Hardware phase offset theta_p in radians.
    pub phase_offset: f64,
    pub drift_amplitude: f64,
    pub drift_frequency: f64,
    /// Audio-band SNR against the modulated carrier power; `None` is noiseless.
    pub noise_snr_db: Option<f64>,
    /// Cardiac phase enters the received carrier with opposite sign.
    pub invert: bool,
    pub noise_seed: u64,
}

impl Default for ChannelScenario {
    fn default() -> Self {
        Self {
            phase_amplitude: 0.3,
            static_offset: [0.0, 0.0],
            static_rotation: 2.0,
            phase_offset: 0.0,
            drift_amplitude: 0.0,
            drift_frequency: 0.0,
            noise_snr_db: None,
            invert: false,
            noise_seed: 0,
        }
    }
}

impl ChannelScenario {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.phase_amplitude) {
            return Err(Error::Config(format!(
                "phase_amplitude {} outside [0, 1] rad",
                self.phase_amplitude
            )));
        }
        if !(self.drift_frequency >= 0.0 && self.drift_frequency < 0.5) {
            return Err(Error::Config(format!(
                "drift frequency {} Hz must be in [0, 0.5)",
                self.drift_frequency
            )));
        }
        if let Some(snr) = self.noise_snr_db {
            if !(snr >= 0.0) {
                return Err(Error::Config(format!("noise SNR {snr} dB must be >= 0")));
            }
        }
        for v in [
            self.static_offset[0],
            self.static_offset[1],
            self.static_rotation,
            self.phase_offset,
            self.drift_amplitude,
        ] {
            if !v.is_finite() {
                return Err(Error::Config("scenario holds a non-finite value".into()));
            }
        }
        Ok(())
    }

    /// Static phasor for the carrier at position `index`.
    pub fn static_phasor(&self, index: usize) -> [f64; 2] {
        let [re, im] = self.static_offset;
        let (s, c) = (self.static_rotation * index as f64).sin_cos();
        [re * c - im * s, re * s + im * c]
    }
}

/// Normalised pulse value `t` seconds into a beat of length `rr`, rising
/// from `base`.
fn pulse_template(t: f64, rr: f64, base: f64) -> f64 {
    let up = UPSTROKE_FRACTION * rr;
    if t < up {
        base + (1.0 - base) * 0.5 * (1.0 - (PI * t / up).cos())
    } else {
        (-(t - up) / (DECAY_FRACTION * rr)).exp()
    }
}

/// Ground-truth cardiac phase `theta_c(t)` sampled at `rate`.
pub fn render_phase_track(beats: &BeatTrain, scenario: &ChannelScenario, rate: f64) -> Result<PhaseSeries> {
    if rate < 64.0 {
        return Err(Error::Config(format!("track rate {rate} Hz below 64 Hz")));
    }
    let n = (beats.duration * rate).round() as usize;
    let mut out = Vec::with_capacity(n);
    let onsets = beats.onsets();
    let mut beat = 0usize;
    let mut base = 0.0;
    for k in 0..n {
        let t = k as f64 / rate;
        while beat + 1 < onsets.len() && t >= onsets[beat + 1] {
            let rr = beats.rr_intervals[beat];
            base = pulse_template(rr, rr, base);
            beat += 1;
        }
        let pulse = match beats.rr_intervals.get(beat) {
            Some(&rr) => pulse_template(t - onsets[beat], rr, base),
            None => 0.0,
        };
        let drift = scenario.drift_amplitude * (2.0 * PI * scenario.drift_frequency * t).sin();
        out.push(scenario.phase_amplitude * pulse + drift);
    }
    Ok(PhaseSeries::new(out, rate, 0.0))
}

/// Received microphone signal for a probe modulated by `track`.
///
/// Per carrier: `alpha_i cos(2 pi f_i t - theta_c(t) - theta_p)` plus an
/// unmodulated static carrier whose demodulated phasor is the scenario's
/// static offset, plus white Gaussian noise.
pub fn simulate_received(probe: &ProbeConfig, track: &PhaseSeries, scenario: &ChannelScenario) -> Result<AudioBuffer> {
    probe.validate()?;
    scenario.validate()?;
    let fs = probe.sample_rate;
    let ratio = fs / track.rate;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(Error::Config(format!(
            "track rate {} Hz does not divide probe rate {fs} Hz",
            track.rate
        )));
    }
    let ratio = ratio.round() as usize;
    let n = probe.num_samples();
    let sign = if scenario.invert { -1.0 } else { 1.0 };
    let last = track.phase.len().saturating_sub(1);
    let theta_at = |k: usize| -> f64 {
        if track.phase.is_empty() {
            return 0.0;
        }
        let j = k / ratio;
        if j >= last {
            return track.phase[last];
        }
        let frac = (k % ratio) as f64 / ratio as f64;
        track.phase[j] * (1.0 - frac) + track.phase[j + 1] * frac
    };

    // alpha e^{-i(theta + theta_p)} + 2 conj(s), per carrier.
    let offsets: Vec<(f64, f64, [f64; 2])> = probe
        .carriers
        .iter()
        .zip(&probe.gains)
        .enumerate()
        .map(|(idx, (&f, &g))| (f, g, scenario.static_phasor(idx)))
        .collect();
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let theta = sign * theta_at(k) + scenario.phase_offset;
        let (ts, tc) = theta.sin_cos();
        let mut acc = 0.0;
        for &(f, g, s) in &offsets {
            let (cs, cc) = carrier_phase(f, k, fs).sin_cos();
            // Re{e^{i w t} (g e^{-i theta} + 2 conj(s))}
            let wr = g * tc + 2.0 * s[0];
            let wi = -g * ts - 2.0 * s[1];
            acc += cc * wr - cs * wi;
        }
        samples.push(acc);
    }

    if let Some(snr) = scenario.noise_snr_db {
        let p_mod: f64 = probe.gains.iter().map(|g| g * g / 2.0).sum();
        let sigma = (p_mod / 10f64.powf(snr / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.noise_seed);
        for s in &mut samples {
            let z: f64 = rng.sample(StandardNormal);
            *s += sigma * z;
        }
    }
    Ok(AudioBuffer::new(samples, fs))
}
