//! Periodogram helpers for band-energy ratios.

use rustfft::{num_complex::Complex64, FftPlanner};

/// One-sided power spectrum of `x` (rectangular window, no mean removal).
///
/// Bin `k` sits at `k * rate / n` Hz for `k` in `0..=n/2`. Interior bins are
/// doubled so that the bins sum to the two-sided energy.
pub fn periodogram(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (0..=n / 2)
        .map(|k| {
            let p = buf[k].norm_sqr();
            if k == 0 || (n % 2 == 0 && k == n / 2) {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// Frequency of bin `k` for an `n`-point transform at `rate`.
pub fn bin_frequency(k: usize, n: usize, rate: f64) -> f64 {
    k as f64 * rate / n as f64
}

/// Sum of `power` over bins whose frequency satisfies `keep`.
pub fn band_energy(power: &[f64], n: usize, rate: f64, keep: impl Fn(f64) -> bool) -> f64 {
    power
        .iter()
        .enumerate()
        .filter(|(k, _)| keep(bin_frequency(*k, n, rate)))
        .map(|(_, p)| p)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Direct O(n^2) DFT, independent of the FFT path.
    fn naive_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                let p = re * re + im * im;
                if k == 0 || (n % 2 == 0 && k == n / 2) {
                    p
                } else {
                    2.0 * p
                }
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_and_parseval() {
        let x: Vec<f64> = (0..96).map(|t| ((t * 37 % 17) as f64 - 8.0) / 3.0).collect();
        let fast = periodogram(&x);
        let slow = naive_power(&x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let total: f64 = fast.iter().sum();
        assert!((total / x.len() as f64 - energy).abs() < 1e-9 * energy);
    }
}
