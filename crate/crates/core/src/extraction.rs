//! Per-carrier pulse-wave extraction: bandpass, I/Q demodulation,
//! decimation to the working rate and phase unwrapping.

use std::f64::consts::PI;

use crate::dsp::Sos;
use crate::error::{Error, Result};
use crate::probe::{carrier_phase, ProbeConfig};
use crate::signal::{
    AudioBuffer, ChannelRecord, IqSeries, MultiChannelRecord, PhaseSeries, SEGMENT_LEN, SEGMENT_SECONDS,
    WORKING_RATE,
};

/// Half-width of each carrier's passband in Hz.
pub const BAND_HALF_WIDTH: f64 = 50.0;
pub const BANDPASS_ORDER: usize = 4;
pub const IQ_LOWPASS_ORDER: usize = 5;
pub const IQ_LOWPASS_CUTOFF: f64 = 50.0;
/// Anti-alias filter applied before picking every n-th sample.
pub const DECIMATION_ORDER: usize = 8;
pub const DECIMATION_CUTOFF: f64 = 45.0;
/// Samples whose I/Q magnitude `|I| + |Q|` falls below this carry no carrier.
pub const DEGENERATE_EPS: f64 = 1e-7;
/// Fraction of carrier-free samples that makes a channel degenerate.
pub const DEGENERATE_FRACTION: f64 = 0.01;

/// Odd-extension length for zero-phase filtering: 50 ms of signal.
fn pad_for(rate: f64) -> usize {
    (0.05 * rate).round() as usize
}

/// Shift in `[pad, 2 pad]` samples closest to a whole number of carrier
/// cycles, if one lies within 0.01 cycle.
fn carrier_period_shift(carrier: f64, fs: f64, pad: usize) -> Option<usize> {
    let miss = |m: usize| {
        let c = m as f64 * carrier / fs;
        (c - c.round()).abs()
    };
    (pad.max(1)..=2 * pad.max(1))
        .min_by(|&a, &b| miss(a).total_cmp(&miss(b)))
        .filter(|&m| miss(m) < 0.01)
}

/// Zero-phase filtering of a signal locked to `carrier`. Both ends are
/// padded with copies shifted by whole carrier cycles, so the tone and its
/// mixing products run on without the phase break an odd reflection makes.
fn coherent_filtfilt(sos: &Sos, x: &[f64], carrier: f64, fs: f64) -> Vec<f64> {
    let pad = pad_for(fs);
    let n = x.len();
    match carrier_period_shift(carrier, fs, pad) {
        Some(m) if n > m + pad => {
            let left: Vec<f64> = (0..pad).map(|j| x[m - pad + j]).collect();
            let right: Vec<f64> = (1..=pad).map(|j| x[n - 1 + j - m]).collect();
            sos.filtfilt_extended(x, &left, &right)
        }
        _ => sos.filtfilt(x, pad),
    }
}

/// Zero-phase Butterworth bandpass of `carrier +/- 50 Hz`.
pub fn bandpass(audio: &AudioBuffer, carrier: f64) -> Result<AudioBuffer> {
    let fs = audio.sample_rate;
    let (lo, hi) = (carrier - BAND_HALF_WIDTH, carrier + BAND_HALF_WIDTH);
    if !(lo > 0.0 && hi < fs / 2.0) {
        return Err(Error::Config(format!(
            "carrier {carrier} Hz +/- {BAND_HALF_WIDTH} Hz does not fit below Nyquist ({} Hz)",
            fs / 2.0
        )));
    }
    let sos = Sos::butter_bandpass(BANDPASS_ORDER, lo, hi, fs)?;
    let samples = coherent_filtfilt(&sos, &audio.samples, carrier, fs);
    Ok(AudioBuffer {
        samples,
        sample_rate: fs,
        start_time: audio.start_time,
    })
}

/// Mixes with `cos` / `sin` of the carrier and lowpasses both products,
/// so `A cos(2 pi f t - theta)` yields `I = A/2 cos(theta)`, `Q = A/2 sin(theta)`.
pub fn iq_demodulate(audio: &AudioBuffer, carrier: f64) -> Result<IqSeries> {
    let fs = audio.sample_rate;
    let sos = Sos::butter_lowpass(IQ_LOWPASS_ORDER, IQ_LOWPASS_CUTOFF, fs)?;
    let mut i = Vec::with_capacity(audio.len());
    let mut q = Vec::with_capacity(audio.len());
    for (k, &x) in audio.samples.iter().enumerate() {
        let (s, c) = carrier_phase(carrier, k, fs).sin_cos();
        i.push(x * c);
        q.push(x * s);
    }
    IqSeries::new(
        coherent_filtfilt(&sos, &i, carrier, fs),
        coherent_filtfilt(&sos, &q, carrier, fs),
        fs,
        carrier,
    )
}

/// Integer decimation ratio from `rate` down to `target`.
pub fn decimation_ratio(rate: f64, target: f64) -> Result<usize> {
    let r = rate / target;
    if !(r >= 1.0) || (r - r.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "source rate {rate} Hz is not an integer multiple of {target} Hz"
        )));
    }
    Ok(r.round() as usize)
}

/// Anti-aliased integer-ratio downsampling of a real sequence.
pub fn decimate_real(x: &[f64], rate: f64, target: f64) -> Result<Vec<f64>> {
    let ratio = decimation_ratio(rate, target)?;
    if ratio == 1 {
        return Ok(x.to_vec());
    }
    let cutoff = DECIMATION_CUTOFF.min(0.45 * target);
    let sos = Sos::butter_lowpass(DECIMATION_ORDER, cutoff, rate)?;
    let y = sos.filtfilt(x, pad_for(rate));
    Ok((0..x.len() / ratio).map(|k| y[k * ratio]).collect())
}

pub fn decimate(iq: &IqSeries, target_rate: f64) -> Result<IqSeries> {
    IqSeries::new(
        decimate_real(&iq.i, iq.rate, target_rate)?,
        decimate_real(&iq.q, iq.rate, target_rate)?,
        target_rate,
        iq.carrier,
    )
}

/// Removes `2 pi` jumps so adjacent differences lie in `(-pi, pi]`.
pub fn unwrap(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &p in phase {
        if let Some(q) = prev {
            let d = p - q;
            // Number of turns that brings d into (-pi, pi].
            let turns = ((d - PI) / (2.0 * PI)).ceil();
            offset -= turns * 2.0 * PI;
        }
        out.push(p + offset);
        prev = Some(p);
    }
    out
}

/// Four-quadrant angle of each I/Q sample, unwrapped.
pub fn phase_of(iq: &IqSeries) -> Result<PhaseSeries> {
    let n = iq.len();
    let dead = iq
        .i
        .iter()
        .zip(&iq.q)
        .filter(|(i, q)| i.abs() + q.abs() < DEGENERATE_EPS)
        .count();
    if n > 0 && dead as f64 >= DEGENERATE_FRACTION * n as f64 {
        return Err(Error::DegenerateSignal(format!(
            "no carrier at {dead} of {n} samples ({} Hz)",
            iq.carrier
        )));
    }
    let raw: Vec<f64> = iq.i.iter().zip(&iq.q).map(|(i, q)| q.atan2(*i)).collect();
    Ok(PhaseSeries::new(unwrap(&raw), iq.rate, iq.carrier))
}

fn extract_channel(audio: &AudioBuffer, carrier: f64) -> Result<(IqSeries, PhaseSeries)> {
    let band = bandpass(audio, carrier)?;
    let iq = iq_demodulate(&band, carrier)?;
    let mut iq = decimate(&iq, WORKING_RATE)?;
    iq.i.truncate(SEGMENT_LEN);
    iq.q.truncate(SEGMENT_LEN);
    if iq.len() < SEGMENT_LEN {
        return Err(Error::Length {
            found: iq.len(),
            remedy: format!("a segment needs {SEGMENT_LEN} samples at {WORKING_RATE} Hz"),
        });
    }
    let phase = phase_of(&iq)?;
    Ok((iq, phase))
}

/// Runs the extraction chain for every probe carrier over the first 30 s
/// of `audio`. A failing channel is kept but marked invalid.
pub fn extract_all(audio: &AudioBuffer, probe: &ProbeConfig) -> Result<MultiChannelRecord> {
    audio.validate()?;
    let fs = audio.sample_rate;
    let needed = (SEGMENT_SECONDS * fs).round() as usize;
    if audio.len() < needed {
        return Err(Error::Length {
            found: audio.len(),
            remedy: format!("extraction needs at least {SEGMENT_SECONDS} s ({needed} samples at {fs} Hz)"),
        });
    }
    if let Some(max) = probe.carriers.iter().cloned().reduce(f64::max) {
        if fs <= 2.0 * max {
            return Err(Error::Config(format!(
                "sample rate {fs} Hz must exceed twice the highest carrier ({max} Hz)"
            )));
        }
    }
    decimation_ratio(fs, WORKING_RATE)?;
    let segment = AudioBuffer {
        samples: audio.samples[..needed].to_vec(),
        sample_rate: fs,
        start_time: audio.start_time,
    };
    let channels = probe
        .carriers
        .iter()
        .map(|&carrier| match extract_channel(&segment, carrier) {
            Ok((iq, phase)) => ChannelRecord {
                carrier,
                valid: true,
                reason: None,
                i: iq.i,
                q: iq.q,
                phase: phase.phase,
            },
            Err(e) => {
                log::warn!("channel {carrier} Hz marked invalid: {e}");
                ChannelRecord::invalid(carrier, e.to_string())
            }
        })
        .collect();
    Ok(MultiChannelRecord {
        carriers: probe.carriers.clone(),
        rate: WORKING_RATE,
        segment_length: SEGMENT_LEN,
        start_time: audio.start_time,
        channels,
        provenance: serde_json::Value::Null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stats::{pearson, rms};
    use crate::signal::AUDIO_RATE;

    fn tone(freq: f64, amp: f64, phase: f64, fs: f64, secs: f64) -> AudioBuffer {
        let n = (fs * secs) as usize;
        let s = (0..n)
            .map(|k| amp * (carrier_phase(freq, k, fs) - phase).cos())
            .collect();
        AudioBuffer::new(s, fs)
    }

    fn interior(x: &[f64], fs: f64) -> &[f64] {
        let e = (0.25 * fs) as usize;
        &x[e..x.len() - e]
    }

    #[test]
    fn in_band_tone_keeps_amplitude() {
        let a = tone(18_000.0, 0.8, 0.0, 48_000.0, 1.0);
        let y = bandpass(&a, 18_000.0).unwrap();
        let ratio = rms(interior(&y.samples, 48_000.0)) / rms(interior(&a.samples, 48_000.0));
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn neighbour_carrier_is_rejected() {
        let a = tone(19_000.0, 1.0, 0.0, 48_000.0, 1.0);
        let y = bandpass(&a, 18_000.0).unwrap();
        assert!(rms(&y.samples) <= 0.01 * rms(&a.samples));
    }

    #[test]
    fn bandpass_response_meets_corner_specs() {
        let fs = 48_000.0;
        let sos = Sos::butter_bandpass(BANDPASS_ORDER, 17_950.0, 18_050.0, fs).unwrap();
        // Forward-backward squares the magnitude.
        let g = |f: f64| 20.0 * (sos.gain_at(f, fs).powi(2)).log10();
        assert!(g(18_000.0) <= 0.0 + 1e-9 && g(18_000.0) >= -1.0);
        assert!(g(17_500.0) <= -40.0 && g(18_500.0) <= -40.0);
    }

    #[test]
    fn white_noise_is_band_limited() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let fs = 48_000.0;
        let x: Vec<f64> = (0..96_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = bandpass(&AudioBuffer::new(x, fs), 18_000.0).unwrap();
        let p = crate::dsp::spectrum::periodogram(&y.samples);
        let n = y.len();
        let total: f64 = p.iter().sum();
        let band = crate::dsp::spectrum::band_energy(&p, n, fs, |f| (17_900.0..=18_100.0).contains(&f));
        assert!(band / total >= 0.99, "{}", band / total);
    }

    #[test]
    fn carrier_at_nyquist_is_a_config_error() {
        let a = tone(18_000.0, 1.0, 0.0, 48_000.0, 0.1);
        assert!(matches!(bandpass(&a, 23_980.0), Err(Error::Config(_))));
    }

    #[test]
    fn demodulation_recovers_constant_angles() {
        let fs = 48_000.0;
        for (theta, want) in [(0.0, [0.5, 0.0]), (PI / 2.0, [0.0, 0.5])] {
            let a = tone(18_000.0, 1.0, theta, fs, 1.0);
            let iq = iq_demodulate(&a, 18_000.0).unwrap();
            let mid = iq.len() / 2;
            assert!((iq.i[mid] - want[0]).abs() < 1e-6, "{}", iq.i[mid]);
            assert!((iq.q[mid] - want[1]).abs() < 1e-6, "{}", iq.q[mid]);
        }
    }

    #[test]
    fn steady_state_angle_within_a_milliradian() {
        let fs = 48_000.0;
        for k in -7..=8 {
            let theta = k as f64 * PI / 8.0;
            let a = tone(20_000.0, 0.3, theta, fs, 1.0);
            let iq = decimate(&iq_demodulate(&bandpass(&a, 20_000.0).unwrap(), 20_000.0).unwrap(), 128.0)
                .unwrap();
            let ph = phase_of(&iq).unwrap();
            let got = ph.phase[64];
            let err = (got - theta + PI).rem_euclid(2.0 * PI) - PI;
            assert!(err.abs() < 1e-3, "theta {theta}: got {got}");
        }
    }

    #[test]
    fn sinusoidal_phase_is_tracked() {
        let fs = 48_000.0;
        let n = 5 * 48_000;
        let truth = |t: f64| 0.2 * (2.0 * PI * 1.2 * t).sin();
        let s: Vec<f64> = (0..n)
            .map(|k| (carrier_phase(19_000.0, k, fs) - truth(k as f64 / fs)).cos())
            .collect();
        let iq = iq_demodulate(&AudioBuffer::new(s, fs), 19_000.0).unwrap();
        let iq = decimate(&iq, 128.0).unwrap();
        let ph = phase_of(&iq).unwrap();
        let want: Vec<f64> = (0..ph.len()).map(|k| truth(k as f64 / 128.0)).collect();
        let r = pearson(&ph.phase[32..ph.len() - 32], &want[32..want.len() - 32]).unwrap();
        assert!(r >= 0.99, "{r}");
    }

    #[test]
    fn decimation_length_and_dc() {
        let fs = 48_000.0;
        let n = 30 * 48_000;
        let iq = IqSeries::new(vec![0.25; n], vec![-0.1; n], fs, 18_000.0).unwrap();
        let d = decimate(&iq, 128.0).unwrap();
        assert_eq!(d.len(), 3840);
        assert!(d.i.iter().all(|v| (v - 0.25).abs() < 1e-9));
        assert!(d.q.iter().all(|v| (v + 0.1).abs() < 1e-9));
        assert!(decimate(&iq, 100.0 * 1.3).is_err());
    }

    #[test]
    fn decimation_passes_cardiac_band_and_rejects_70_hz() {
        let fs = 48_000.0;
        let n = 4 * 48_000;
        let sig = |f: f64| -> Vec<f64> { (0..n).map(|k| (2.0 * PI * f * k as f64 / fs).sin()).collect() };
        let x2 = decimate_real(&sig(2.0), fs, 128.0).unwrap();
        let amp2 = rms(interior(&x2, 128.0)) * 2f64.sqrt();
        assert!((amp2 - 1.0).abs() < 0.01, "{amp2}");
        let x70 = decimate_real(&sig(70.0), fs, 128.0).unwrap();
        let att = 20.0 * (rms(interior(&x70, 128.0)) * 2f64.sqrt()).log10();
        assert!(att <= -40.0, "{att} dB");
    }

    #[test]
    fn phase_of_constant_and_circular_inputs() {
        let iq = IqSeries::new(vec![0.5; 10], vec![0.0; 10], 128.0, 0.0).unwrap();
        assert!(phase_of(&iq).unwrap().phase.iter().all(|&p| p == 0.0));
        let iq = IqSeries::new(vec![0.0; 10], vec![0.5; 10], 128.0, 0.0).unwrap();
        assert!(phase_of(&iq)
            .unwrap()
            .phase
            .iter()
            .all(|&p| (p - PI / 2.0).abs() < 1e-15));

        let n = 1000;
        let t: Vec<f64> = (0..=n).map(|k| 4.0 * PI * k as f64 / n as f64).collect();
        let iq = IqSeries::new(t.iter().map(|v| v.cos()).collect(), t.iter().map(|v| v.sin()).collect(), 128.0, 0.0)
            .unwrap();
        let ph = phase_of(&iq).unwrap();
        assert!((ph.phase[n] - 4.0 * PI).abs() < 1e-9);
        assert!(ph.phase.windows(2).all(|w| (w[1] - w[0]).abs() <= PI));
    }

    #[test]
    fn dead_carrier_is_degenerate() {
        let mut i = vec![0.3; 200];
        for v in i.iter_mut().take(2) {
            *v = 0.0;
        }
        let iq = IqSeries::new(i, vec![0.0; 200], 128.0, 0.0).unwrap();
        assert!(matches!(phase_of(&iq), Err(Error::DegenerateSignal(_))));
    }

    #[test]
    fn unwrap_handles_exact_pi_steps() {
        let u = unwrap(&[0.0, PI, 0.0, -PI]);
        for w in u.windows(2) {
            let d = w[1] - w[0];
            assert!(d > -PI && d <= PI + 1e-15, "{d}");
        }
    }

    #[test]
    fn segment_edges_carry_the_carrier() {
        let probe = ProbeConfig::default();
        for theta in [0.0, 1.0, 2.0, 3.0, -2.5] {
            let n = (SEGMENT_SECONDS * AUDIO_RATE) as usize;
            let s = (0..n)
                .map(|k| probe.carriers.iter().map(|&f| 0.25 * (carrier_phase(f, k, AUDIO_RATE) - theta).cos()).sum())
                .collect();
            let rec = extract_all(&AudioBuffer::new(s, AUDIO_RATE), &probe).unwrap();
            for ch in &rec.channels {
                for k in [0, 1, SEGMENT_LEN - 1] {
                    let r = ch.i[k].hypot(ch.q[k]);
                    assert!((r - 0.125).abs() < 0.125 * 0.02, "{} Hz sample {k}: |iq| = {r}", ch.carrier);
                    let err = (ch.q[k].atan2(ch.i[k]) - theta + PI).rem_euclid(2.0 * PI) - PI;
                    assert!(err.abs() < 0.01, "{} Hz sample {k}: angle error {err}", ch.carrier);
                }
            }
        }
    }
}
