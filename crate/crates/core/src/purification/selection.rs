//! Best-carrier selection by `S = (P + eta_b) / 2`.

use serde::{Deserialize, Serialize};

use crate::dsp::{spectrum, stats};
use crate::error::{Error, Result};
use crate::quality::{CARDIAC_BAND_HZ, IGNORED_LOW_HZ};

/// Cardiac-band share of a de-meaned phase, ignoring `[0, 0.2]` Hz.
pub fn band_energy_ratio(phase: &[f64], rate: f64) -> Result<f64> {
    let n = phase.len();
    let p = spectrum::periodogram(&stats::demeaned(phase));
    let total = spectrum::band_energy(&p, n, rate, |f| f > IGNORED_LOW_HZ);
    let all: f64 = p.iter().sum();
    if total == 0.0 || total <= 1e-12 * all {
        return Err(Error::DegenerateSignal("no phase energy above 0.2 Hz".into()));
    }
    let band = spectrum::band_energy(&p, n, rate, |f| (CARDIAC_BAND_HZ.0..=CARDIAC_BAND_HZ.1).contains(&f));
    Ok(band / total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub index: usize,
    pub carrier: f64,
    pub pca_ratio: f64,
    pub band_ratio: f64,
    /// `band_ratio` was undefined and scored as 0.
    pub band_degenerate: bool,
    pub score: f64,
}

impl ChannelScore {
    pub fn new(index: usize, carrier: f64, pca_ratio: f64, band: Result<f64>) -> Self {
        let (band_ratio, band_degenerate) = match band {
            Ok(v) => (v, false),
            Err(_) => (0.0, true),
        };
        Self {
            index,
            carrier,
            pca_ratio,
            band_ratio,
            band_degenerate,
            score: (pca_ratio + band_ratio) / 2.0,
        }
    }
}

/// Position of the best score; ties go to the lowest carrier.
pub fn best_score(scores: &[ChannelScore]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (k, s) in scores.iter().enumerate() {
        if !s.score.is_finite() {
            continue;
        }
        best = match best {
            None => Some(k),
            Some(b) => {
                let cur = &scores[b];
                if s.score > cur.score || (s.score == cur.score && s.carrier < cur.carrier) {
                    Some(k)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or_else(|| Error::Selection("no valid channel to select".into()))
}
