//! Butterworth IIR design as second-order sections and zero-phase application.

use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad, `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        let num = self.b[0] + z_inv * self.b[1] + z2 * self.b[2];
        let den = Complex64::new(1.0, 0.0) + z_inv * self.a[0] + z2 * self.a[1];
        num / den
    }

    /// Direct-form-II-transposed state that a constant unit input settles into.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * y;
        let z1 = y - b0;
        debug_assert!((z1 - (b1 - a1 * y + z2)).abs() < 1e-9 * (1.0 + z1.abs()));
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        (b0 + b1 + b2) / (1.0 + a1 + a2)
    }
}

/// Cascade of second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Lowpass Butterworth of the given order, cutoff at -3 dB.
    pub fn butter_lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("filter order must be at least 1".into()));
        }
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::Config(format!(
                "lowpass cutoff {cutoff} Hz must lie in (0, {}) Hz",
                fs / 2.0
            )));
        }
        let wc = prewarp(cutoff, fs);
        let poles: Vec<Complex64> = prototype_poles(order).into_iter().map(|p| p * wc).collect();
        let mut sections = Vec::new();
        for p in upper_half(&poles) {
            let zp = bilinear(p, fs);
            if p.im.abs() < 1e-12 * p.norm() {
                sections.push(Biquad {
                    b: [1.0, 1.0, 0.0],
                    a: [-zp.re, 0.0],
                });
            } else {
                sections.push(Biquad {
                    b: [1.0, 2.0, 1.0],
                    a: [-2.0 * zp.re, zp.norm_sqr()],
                });
            }
        }
        for s in &mut sections {
            let g = s.dc_gain();
            for b in &mut s.b {
                *b /= g;
            }
        }
        Ok(Self { sections })
    }

    /// Bandpass Butterworth built from an order-`order` lowpass prototype
    /// (`2 * order` poles), with -3 dB edges at `low` and `high`.
    pub fn butter_bandpass(order: usize, low: f64, high: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("filter order must be at least 1".into()));
        }
        if !(low > 0.0 && low < high && high < fs / 2.0) {
            return Err(Error::Config(format!(
                "bandpass edges {low}..{high} Hz must satisfy 0 < low < high < {} Hz",
                fs / 2.0
            )));
        }
        let w1 = prewarp(low, fs);
        let w2 = prewarp(high, fs);
        let bw = w2 - w1;
        let w0sq = w1 * w2;
        let mut analog = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            // s^2 - p*bw*s + w0^2 = 0
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0sq).sqrt();
            analog.push((pb + disc) / 2.0);
            analog.push((pb - disc) / 2.0);
        }
        let mut sections: Vec<Biquad> = upper_half(&analog)
            .into_iter()
            .map(|p| {
                let zp = bilinear(p, fs);
                Biquad {
                    b: [1.0, 0.0, -1.0],
                    a: [-2.0 * zp.re, zp.norm_sqr()],
                }
            })
            .collect();
        // Unit gain at the digital image of the analog centre frequency.
        let f0 = (w0sq.sqrt() / (2.0 * fs)).atan() * fs / PI;
        let sos = Self {
            sections: sections.clone(),
        };
        let g = sos.gain_at(f0, fs);
        let per = g.powf(1.0 / sections.len() as f64);
        for s in &mut sections {
            for b in &mut s.b {
                *b /= per;
            }
        }
        Ok(Self { sections })
    }

    /// Magnitude response at `freq` Hz.
    pub fn gain_at(&self, freq: f64, fs: f64) -> f64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / fs);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
            .norm()
    }

    /// Causal filtering with zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut state = vec![[0.0, 0.0]; self.sections.len()];
        run_cascade(&self.sections, &mut y, &mut state);
        y
    }

    fn filter_with_initial(&self, y: &mut [f64]) {
        let Some(&x0) = y.first() else { return };
        let mut scale = x0;
        let mut state = Vec::with_capacity(self.sections.len());
        for s in &self.sections {
            let st = s.step_state();
            state.push([st[0] * scale, st[1] * scale]);
            scale *= s.dc_gain();
        }
        run_cascade(&self.sections, y, &mut state);
    }

    /// Forward-backward (zero-phase) filtering with odd extension of
    /// `padlen` samples at both ends and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = padlen.min(n - 1);
        let left: Vec<f64> = (1..=pad).rev().map(|k| 2.0 * x[0] - x[k]).collect();
        let right: Vec<f64> = (1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]).collect();
        self.filtfilt_extended(x, &left, &right)
    }

    /// Forward-backward filtering of `left ‖ x ‖ right`, returning the part
    /// aligned with `x`.
    pub fn filtfilt_extended(&self, x: &[f64], left: &[f64], right: &[f64]) -> Vec<f64> {
        let mut ext = Vec::with_capacity(left.len() + x.len() + right.len());
        ext.extend_from_slice(left);
        ext.extend_from_slice(x);
        ext.extend_from_slice(right);
        self.filter_with_initial(&mut ext);
        ext.reverse();
        self.filter_with_initial(&mut ext);
        ext.reverse();
        ext[left.len()..left.len() + x.len()].to_vec()
    }
}

// All sections advance per sample so their recurrences overlap.
fn run_cascade(sections: &[Biquad], y: &mut [f64], state: &mut [[f64; 2]]) {
    for v in y.iter_mut() {
        let mut x = *v;
        for (s, z) in sections.iter().zip(state.iter_mut()) {
            let out = s.b[0] * x + z[0];
            z[0] = s.b[1] * x - s.a[0] * out + z[1];
            z[1] = s.b[2] * x - s.a[1] * out;
            x = out;
        }
        *v = x;
    }
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

fn bilinear(p: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + p) / (k - p)
}

/// Left-half-plane poles of the unit-cutoff analog Butterworth prototype.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

/// One representative per conjugate pair (plus real poles).
fn upper_half(poles: &[Complex64]) -> Vec<Complex64> {
    poles
        .iter()
        .copied()
        .filter(|p| p.im >= -1e-12 * p.norm())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(g: f64) -> f64 {
        20.0 * g.log10()
    }

    #[test]
    fn lowpass_has_unit_dc_and_minus_3db_at_cutoff() {
        for order in 1..=8 {
            let sos = Sos::butter_lowpass(order, 50.0, 48_000.0).unwrap();
            assert!((sos.gain_at(0.0, 48_000.0) - 1.0).abs() < 1e-9);
            let g = db(sos.gain_at(50.0, 48_000.0));
            assert!((g + 3.0103).abs() < 1e-3, "order {order}: {g}");
        }
    }

    #[test]
    fn lowpass_rolloff_matches_butterworth_magnitude() {
        let sos = Sos::butter_lowpass(5, 50.0, 48_000.0).unwrap();
        // Analog Butterworth magnitude; bilinear warping is negligible this far below Nyquist.
        let expected = (1.0 + (200.0f64 / 50.0).powi(10)).sqrt().recip();
        let got = sos.gain_at(200.0, 48_000.0);
        assert!((got / expected - 1.0).abs() < 1e-3, "{got} vs {expected}");
    }

    #[test]
    fn bandpass_edges_and_centre() {
        let fs = 48_000.0;
        let sos = Sos::butter_bandpass(4, 17_950.0, 18_050.0, fs).unwrap();
        assert_eq!(sos.sections.len(), 4);
        assert!(db(sos.gain_at(18_000.0, fs)).abs() < 0.01);
        assert!((db(sos.gain_at(17_950.0, fs)) + 3.01).abs() < 0.05);
        assert!((db(sos.gain_at(18_050.0, fs)) + 3.01).abs() < 0.05);
        assert!(db(sos.gain_at(18_500.0, fs)) < -60.0);
        assert!(db(sos.gain_at(17_500.0, fs)) < -60.0);
    }

    #[test]
    fn rejects_cutoffs_outside_nyquist() {
        assert!(Sos::butter_lowpass(4, 30_000.0, 48_000.0).is_err());
        assert!(Sos::butter_bandpass(4, 23_900.0, 24_050.0, 48_000.0).is_err());
        assert!(Sos::butter_bandpass(4, 100.0, 50.0, 48_000.0).is_err());
    }

    #[test]
    fn filtfilt_preserves_constants_and_is_zero_phase() {
        let sos = Sos::butter_lowpass(5, 50.0, 48_000.0).unwrap();
        let x = vec![0.37; 5000];
        let y = sos.filtfilt(&x, 2000);
        assert!(y.iter().all(|v| (v - 0.37).abs() < 1e-9));

        // A slow sinusoid comes back unshifted.
        let fs = 1000.0;
        let sos = Sos::butter_lowpass(4, 100.0, fs).unwrap();
        let x: Vec<f64> = (0..4000)
            .map(|k| (2.0 * PI * 5.0 * k as f64 / fs).sin())
            .collect();
        let y = sos.filtfilt(&x, 300);
        let err = x[500..3500]
            .iter()
            .zip(&y[500..3500])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "{err}");
    }
}
