//! Segment quality gate: channel stability score `C` and cardiac band
//! spectrum energy ratio `eta_c`.

use serde::{Deserialize, Serialize};

use crate::dsp::{spectrum, stats};
use crate::error::{Error, Result};
use crate::signal::MultiChannelRecord;

/// Pairs below this fraction of the best pair's similarity are ignored.
pub const SIMILARITY_KEEP_FRACTION: f64 = 0.6;
pub const CARDIAC_BAND_HZ: (f64, f64) = (0.5, 5.0);
/// Bins at or below this frequency are left out of the total energy.
pub const IGNORED_LOW_HZ: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityThresholds {
    pub stability: f64,
    pub cardiac: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            stability: 0.90,
            cardiac: 0.70,
        }
    }
}

impl QualityThresholds {
    /// Both metrics must strictly exceed their thresholds.
    pub fn admits(&self, stability: f64, cardiac: f64) -> bool {
        stability > self.stability && cardiac > self.cardiac
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "similarity needs equal lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Full symmetric similarity matrix with unit diagonal.
pub fn similarity_matrix(channels: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let n = channels.len();
    let mut m = vec![vec![1.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let s = cosine_similarity(channels[a], channels[b])?;
            m[a][b] = s;
            m[b][a] = s;
        }
    }
    Ok(m)
}

/// Mean of the off-diagonal similarities that reach 60% of the best pair.
pub fn stability_from_pairs(pairs: &[f64]) -> Result<f64> {
    let Some(max) = pairs.iter().cloned().reduce(f64::max) else {
        return Err(Error::InsufficientChannels { needed: 2, found: 1 });
    };
    // A negative best pair would otherwise exclude itself.
    let cut = if max > 0.0 { SIMILARITY_KEEP_FRACTION * max } else { max };
    let kept: Vec<f64> = pairs.iter().copied().filter(|&s| s >= cut).collect();
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub fn stability_score(channels: &[&[f64]]) -> Result<f64> {
    if channels.len() < 2 {
        return Err(Error::InsufficientChannels {
            needed: 2,
            found: channels.len(),
        });
    }
    let m = similarity_matrix(channels)?;
    let mut pairs = Vec::new();
    for a in 0..channels.len() {
        for b in a + 1..channels.len() {
            pairs.push(m[a][b]);
        }
    }
    stability_from_pairs(&pairs)
}

/// Cardiac-band share of one de-meaned stretch; `None` when it holds no
/// energy above the ignored low band.
pub fn band_share(x: &[f64], rate: f64) -> Option<f64> {
    let centred = stats::demeaned(x);
    let p = spectrum::periodogram(&centred);
    let n = x.len();
    let total = spectrum::band_energy(&p, n, rate, |f| f > IGNORED_LOW_HZ);
    let all: f64 = p.iter().sum();
    if total <= 1e-12 * all || total == 0.0 {
        return None;
    }
    let band = spectrum::band_energy(&p, n, rate, |f| {
        (CARDIAC_BAND_HZ.0..=CARDIAC_BAND_HZ.1).contains(&f)
    });
    Some(band / total)
}

/// Band shares of the first and second halves of one channel.
pub fn half_ratios(x: &[f64], rate: f64) -> Result<Option<[f64; 2]>> {
    if x.len() % 2 != 0 || x.is_empty() {
        return Err(Error::Length {
            found: x.len(),
            remedy: "cardiac ratio needs an even, non-empty segment".into(),
        });
    }
    let (a, b) = x.split_at(x.len() / 2);
    Ok(match (band_share(a, rate), band_share(b, rate)) {
        (Some(a), Some(b)) => Some([a, b]),
        _ => None,
    })
}

/// `max over channels of min(first-half share, second-half share)`.
pub fn cardiac_ratio(channels: &[&[f64]], rate: f64) -> Result<f64> {
    let mut best: Option<f64> = None;
    for ch in channels {
        if let Some([a, b]) = half_ratios(ch, rate)? {
            let v = a.min(b);
            best = Some(best.map_or(v, |m: f64| m.max(v)));
        }
    }
    best.ok_or_else(|| Error::DegenerateSignal("every channel is flat".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub stability_score: Option<f64>,
    pub cardiac_ratio: Option<f64>,
    pub pass: bool,
    /// Pairwise similarities indexed by channel; `None` where a channel is invalid.
    pub per_pair_similarity: Vec<Vec<Option<f64>>>,
    pub per_channel_half_ratios: Vec<Option<[f64; 2]>>,
    pub thresholds: QualityThresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Scores a record on its valid channels' de-meaned phases.
pub fn assess(record: &MultiChannelRecord, thresholds: &QualityThresholds) -> QualityReport {
    let n = record.channels.len();
    let mut report = QualityReport {
        stability_score: None,
        cardiac_ratio: None,
        pass: false,
        per_pair_similarity: vec![vec![None; n]; n],
        per_channel_half_ratios: vec![None; n],
        thresholds: *thresholds,
        reason: None,
    };
    if let Err(e) = record.check_shape() {
        report.reason = Some(e.to_string());
        return report;
    }
    let valid: Vec<(usize, Vec<f64>)> = record
        .valid_channels()
        .map(|(k, c)| (k, stats::demeaned(&c.phase)))
        .collect();
    let mut reasons = Vec::new();

    for (a, (ka, xa)) in valid.iter().enumerate() {
        report.per_pair_similarity[*ka][*ka] = Some(1.0);
        for (kb, xb) in valid.iter().skip(a + 1) {
            if let Ok(s) = cosine_similarity(xa, xb) {
                report.per_pair_similarity[*ka][*kb] = Some(s);
                report.per_pair_similarity[*kb][*ka] = Some(s);
            }
        }
    }
    let pairs: Vec<f64> = valid
        .iter()
        .enumerate()
        .flat_map(|(a, (ka, _))| {
            let row = &report.per_pair_similarity[*ka];
            valid.iter().skip(a + 1).filter_map(move |(kb, _)| row[*kb])
        })
        .collect();
    if valid.len() < 2 {
        reasons.push(
            Error::InsufficientChannels {
                needed: 2,
                found: valid.len(),
            }
            .to_string(),
        );
    } else {
        match stability_from_pairs(&pairs) {
            Ok(c) => report.stability_score = Some(c),
            Err(_) => reasons.push(Error::UndefinedSimilarity.to_string()),
        }
    }

    let mut best: Option<f64> = None;
    for (k, x) in &valid {
        match half_ratios(x, record.rate) {
            Ok(Some(h)) => {
                report.per_channel_half_ratios[*k] = Some(h);
                let v = h[0].min(h[1]);
                best = Some(best.map_or(v, |m: f64| m.max(v)));
            }
            Ok(None) => {}
            Err(e) => reasons.push(e.to_string()),
        }
    }
    match best {
        Some(v) => report.cardiac_ratio = Some(v),
        None => reasons.push(Error::DegenerateSignal("every channel is flat".into()).to_string()),
    }

    report.pass = match (report.stability_score, report.cardiac_ratio) {
        (Some(c), Some(e)) => {
            if !thresholds.admits(c, e) {
                reasons.push(format!(
                    "C = {c:.3} (needs > {}), eta_c = {e:.3} (needs > {})",
                    thresholds.stability, thresholds.cardiac
                ));
            }
            thresholds.admits(c, e)
        }
        _ => false,
    };
    if !reasons.is_empty() {
        report.reason = Some(reasons.join("; "));
    }
    report
}
