//! Stationary (undecimated) wavelet transform with Coif5 and periodic
//! boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEVELS: usize = 7;

/// Coif5 decomposition lowpass as tabulated by PyWavelets
/// (`pywt.Wavelet("coif5").dec_lo`); sums to `sqrt(2)`.
pub const COIF5_DEC_LO: [f64; 30] = [
    -9.604010112767894e-08,
    -1.6237995172048338e-07,
    2.0612203985788783e-06,
    3.7007277113394796e-06,
    -2.1270221672515614e-05,
    -4.12198619242655e-05,
    0.00014035632812373243,
    0.0003018579416682448,
    -0.0006375589261258812,
    -0.0016616273039298788,
    0.0024315754425382886,
    0.006761520220620417,
    -0.009159507338676163,
    -0.019758391600965465,
    0.032674799467057355,
    0.041287530472117834,
    -0.10556315130733723,
    -0.06203775157498196,
    0.4379823066591634,
    0.7742936228603274,
    0.42157126673075435,
    -0.052046670253554764,
    -0.09192158806008609,
    0.028169744270532353,
    0.023408322118927783,
    -0.010131584846900276,
    -0.00415931262757864,
    0.0021782943778456947,
    0.0003585777411617577,
    -0.000212081862067494,
];

/// Quadrature-mirror highpass, `g[k] = (-1)^(k+1) h[L-1-k]`.
pub fn coif5_dec_hi() -> [f64; 30] {
    let mut g = [0.0; 30];
    for (k, v) in g.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        *v = sign * COIF5_DEC_LO[29 - k];
    }
    g
}

/// Filters scaled by `1/sqrt(2)` so each level is an energy-preserving
/// split and the band coefficients stay in signal units.
fn normalized_filters() -> ([f64; 30], [f64; 30]) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let hi = coif5_dec_hi();
    (COIF5_DEC_LO.map(|v| v * s), hi.map(|v| v * s))
}

/// Eight band sequences `c1..c8`: details d1..d7 then approximation a7.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwtDecomposition {
    pub coeffs: Vec<Vec<f64>>,
    pub levels: usize,
}

impl SwtDecomposition {
    /// Approximate passband of band `c` (1-based) at `rate`.
    pub fn band_range(c: usize, rate: f64) -> (f64, f64) {
        if c > LEVELS {
            (0.0, rate / 2f64.powi(LEVELS as i32 + 1))
        } else {
            (rate / 2f64.powi(c as i32 + 1), rate / 2f64.powi(c as i32))
        }
    }

    pub fn band_energy(&self, c: usize) -> f64 {
        self.coeffs[c - 1].iter().map(|v| v * v).sum()
    }
}

/// `y[n] = sum_k f[k] x[(n - k*step) mod N]`.
fn analyze(x: &[f64], f: &[f64], step: usize) -> Vec<f64> {
    let n = x.len();
    let mut y = vec![0.0; n];
    for (k, &fk) in f.iter().enumerate() {
        let shift = (k * step) % n;
        // y[m] += fk * x[m - shift], split into the wrap and the straight part.
        for (m, ym) in y.iter_mut().enumerate().take(shift) {
            *ym += fk * x[n - shift + m];
        }
        for (ym, xv) in y[shift..].iter_mut().zip(x) {
            *ym += fk * xv;
        }
    }
    y
}

/// Adjoint of [`analyze`]: `y[m] += sum_k f[k] c[(m + k*step) mod N]`.
fn synthesize_into(y: &mut [f64], c: &[f64], f: &[f64], step: usize) {
    let n = c.len();
    for (k, &fk) in f.iter().enumerate() {
        let shift = (k * step) % n;
        for (ym, cv) in y.iter_mut().zip(c[shift..].iter().chain(&c[..shift])) {
            *ym += fk * cv;
        }
    }
}

fn check_length(n: usize, levels: usize) -> Result<()> {
    let block = 1usize << levels;
    if n == 0 || n % block != 0 {
        let down = n / block * block;
        return Err(Error::Length {
            found: n,
            remedy: format!(
                "SWT needs a multiple of {block} samples; trim to {down} or zero-pad to {}",
                down + block
            ),
        });
    }
    Ok(())
}

pub fn swt_decompose(x: &[f64], levels: usize) -> Result<SwtDecomposition> {
    check_length(x.len(), levels)?;
    let (h, g) = normalized_filters();
    let mut approx = x.to_vec();
    let mut coeffs = Vec::with_capacity(levels + 1);
    for j in 0..levels {
        let step = 1 << j;
        coeffs.push(analyze(&approx, &g, step));
        approx = analyze(&approx, &h, step);
    }
    coeffs.push(approx);
    Ok(SwtDecomposition { coeffs, levels })
}

/// Inverse transform from bands where `keep(c)` holds (1-based); others are
/// treated as zero.
pub fn swt_reconstruct_bands(dec: &SwtDecomposition, keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let (h, g) = normalized_filters();
    let levels = dec.levels;
    let n = dec.coeffs[0].len();
    let mut approx = if keep(levels + 1) {
        dec.coeffs[levels].clone()
    } else {
        vec![0.0; n]
    };
    for j in (0..levels).rev() {
        let step = 1 << j;
        let mut next = vec![0.0; n];
        synthesize_into(&mut next, &approx, &h, step);
        if keep(j + 1) {
            synthesize_into(&mut next, &dec.coeffs[j], &g, step);
        }
        approx = next;
    }
    approx
}

pub fn swt_reconstruct(dec: &SwtDecomposition) -> Vec<f64> {
    swt_reconstruct_bands(dec, |_| true)
}

/// Bands kept by motion-artifact removal, roughly 0.5 to 8 Hz at 128 Hz.
pub const KEPT_BANDS: std::ops::RangeInclusive<usize> = 4..=7;

/// Reconstruction from the bands where `keep(c)` holds, computed on the
/// mirrored signal `x, reverse(x)` so the periodic transform sees no jump
/// at the segment ends. Returns `x.len()` samples.
pub fn band_filter(x: &[f64], keep: impl Fn(usize) -> bool) -> Result<Vec<f64>> {
    check_length(x.len(), LEVELS)?;
    let mut ext = Vec::with_capacity(2 * x.len());
    ext.extend_from_slice(x);
    ext.extend(x.iter().rev());
    let dec = swt_decompose(&ext, LEVELS)?;
    let mut y = swt_reconstruct_bands(&dec, keep);
    y.truncate(x.len());
    Ok(y)
}

pub fn remove_motion_artifacts(x: &[f64]) -> Result<Vec<f64>> {
    band_filter(x, |c| KEPT_BANDS.contains(&c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stats::pearson;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tone(f: f64, amp: f64, phase: f64) -> Vec<f64> {
        (0..3840).map(|k| amp * (2.0 * PI * f * k as f64 / 128.0 + phase).sin()).collect()
    }

    fn random(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn coif5_filters_are_orthonormal() {
        let h = COIF5_DEC_LO;
        let g = coif5_dec_hi();
        assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-12);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        for shift in 0..15 {
            let hh: f64 = (0..30 - 2 * shift).map(|k| h[k] * h[k + 2 * shift]).sum();
            let hg: f64 = (0..30 - 2 * shift).map(|k| h[k] * g[k + 2 * shift]).sum();
            let expect = if shift == 0 { 1.0 } else { 0.0 };
            assert!((hh - expect).abs() < 1e-10, "shift {shift}: {hh}");
            assert!(hg.abs() < 1e-10);
        }
        // Coif5 has ten vanishing wavelet moments.
        for p in 0..10 {
            let m: f64 = g.iter().enumerate().map(|(k, v)| (k as f64 / 10.0).powi(p) * v).sum();
            assert!(m.abs() < 1e-7, "moment {p}: {m}");
        }
    }

    #[test]
    fn zero_input_gives_zero_bands() {
        let dec = swt_decompose(&[0.0; 3840], LEVELS).unwrap();
        assert_eq!(dec.coeffs.len(), 8);
        assert!(dec.coeffs.iter().all(|c| c.len() == 3840 && c.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn full_reconstruction_is_exact() {
        let x = random(1, 3840);
        let y = swt_reconstruct(&swt_decompose(&x, LEVELS).unwrap());
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "max error {err}");
    }

    #[test]
    fn three_hertz_lands_in_c5() {
        let dec = swt_decompose(&tone(3.0, 1.0, 0.0), LEVELS).unwrap();
        let total: f64 = (1..=8).map(|c| dec.band_energy(c)).sum();
        assert!(dec.band_energy(5) / total >= 0.8);
        assert_eq!(SwtDecomposition::band_range(5, 128.0), (2.0, 4.0));
        assert_eq!(SwtDecomposition::band_range(8, 128.0), (0.0, 0.5));
    }

    #[test]
    fn bad_length_names_remedy() {
        match swt_decompose(&[0.0; 3841], LEVELS) {
            Err(Error::Length { found, remedy }) => {
                assert_eq!(found, 3841);
                assert!(remedy.contains("3840"));
            }
            other => panic!("{other:?}"),
        }
    }

    fn amplitude_at(x: &[f64], f: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, v) in x.iter().enumerate() {
            let a = 2.0 * PI * f * k as f64 / 128.0;
            re += v * a.cos();
            im += v * a.sin();
        }
        2.0 * re.hypot(im) / x.len() as f64
    }

    #[test]
    fn drift_removed_pulse_kept() {
        let drift = tone(0.1, 1.0, 0.3);
        let pulse = tone(1.5, 1.0, 0.0);
        let x: Vec<f64> = drift.iter().zip(&pulse).map(|(a, b)| a + b).collect();
        let y = remove_motion_artifacts(&x).unwrap();
        let drift_db = 20.0 * (amplitude_at(&y, 0.1) / 1.0).log10();
        let pulse_db = 20.0 * amplitude_at(&y, 1.5).log10();
        assert!(drift_db <= -20.0, "drift {drift_db} dB");
        assert!(pulse_db.abs() <= 1.0, "pulse {pulse_db} dB");
    }

    #[test]
    fn slow_drift_removed_at_any_phase() {
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        for k in 0..8 {
            let d = tone(0.05, 1.0, k as f64 * PI / 8.0);
            let y = remove_motion_artifacts(&d).unwrap();
            assert!(20.0 * (rms(&y) / rms(&d)).log10() <= -20.0);
        }
    }

    #[test]
    fn buzz_removed() {
        let x: Vec<f64> = tone(40.0, 1.0, 0.0).iter().zip(tone(1.5, 1.0, 0.0)).map(|(a, b)| a + b).collect();
        let y = remove_motion_artifacts(&x).unwrap();
        assert!(20.0 * amplitude_at(&y, 40.0).log10() <= -20.0);
    }

    #[test]
    fn in_band_passes() {
        let x = tone(2.0, 1.0, 0.0);
        let y = remove_motion_artifacts(&x).unwrap();
        assert!(pearson(&x, &y).unwrap() >= 0.99);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn decomposition_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, k in -3.0..3.0f64) {
            let a = random(s1, 1024);
            let b = random(s2 + 5000, 1024);
            let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * y).collect();
            let da = swt_decompose(&a, LEVELS).unwrap();
            let db = swt_decompose(&b, LEVELS).unwrap();
            let dab = swt_decompose(&ab, LEVELS).unwrap();
            for c in 0..8 {
                for i in 0..1024 {
                    prop_assert!((dab.coeffs[c][i] - da.coeffs[c][i] - k * db.coeffs[c][i]).abs() < 1e-10);
                }
            }
        }
    }
}
