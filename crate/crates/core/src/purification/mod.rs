//! Static-component elimination, carrier selection and motion-artifact
//! removal.

pub mod arc;
pub mod selection;
pub mod static_elim;
pub mod swt;

pub use arc::{ArcCenterEstimate, Point};
pub use selection::{band_energy_ratio, ChannelScore};
pub use static_elim::{eliminate_static, pca_explained_ratio, PurificationParams, StaticElimination, WindowLog};
pub use swt::{remove_motion_artifacts, swt_decompose, SwtDecomposition};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quality::{assess, QualityReport, QualityThresholds};
use crate::signal::{MultiChannelRecord, Rhythm};

/// One purified pulse wave, ready for the detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub samples: Vec<f64>,
    pub rate: f64,
    pub source_carrier: f64,
    #[serde(default)]
    pub label: Option<Rhythm>,
    #[serde(default)]
    pub provenance: PurificationTrace,
}

impl PulseSegment {
    pub fn validate(&self, expected_len: usize) -> Result<()> {
        if self.samples.len() != expected_len {
            return Err(Error::Length {
                found: self.samples.len(),
                remedy: format!("pulse segments hold exactly {expected_len} samples"),
            });
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateSignal("non-finite pulse sample".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrace {
    pub index: usize,
    pub carrier: f64,
    pub rectified_windows: usize,
    pub pass_through: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PurificationTrace {
    pub chosen_index: usize,
    pub chosen_carrier: f64,
    pub rectified_windows: usize,
    pub scores: Vec<ChannelScore>,
    pub channels: Vec<ChannelTrace>,
    /// Gating log of the chosen channel.
    pub windows: Vec<WindowLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityReport>,
    pub forced: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurifyOptions {
    pub params: PurificationParams,
    pub thresholds: QualityThresholds,
    /// Skip the quality gate.
    pub force: bool,
}

struct Candidate {
    score: ChannelScore,
    elim: StaticElimination,
}

fn candidates(record: &MultiChannelRecord, params: &PurificationParams, traces: &mut Vec<ChannelTrace>) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (index, ch) in record.valid_channels() {
        let iq = ch.iq(record.rate);
        let mut trace = ChannelTrace {
            index,
            carrier: ch.carrier,
            ..Default::default()
        };
        let result = eliminate_static(&iq, params)
            .and_then(|elim| pca_explained_ratio(&iq, params).map(|p| (elim, p)));
        match result {
            Ok((elim, p)) => {
                trace.rectified_windows = elim.rectified;
                trace.pass_through = elim.pass_through;
                let band = band_energy_ratio(&elim.phase.phase, record.rate);
                out.push(Candidate {
                    score: ChannelScore::new(index, ch.carrier, p, band),
                    elim,
                });
            }
            Err(e) => {
                warn!("channel {index} ({} Hz) dropped from selection: {e}", ch.carrier);
                trace.error = Some(e.to_string());
            }
        }
        traces.push(trace);
    }
    out
}

/// Index (into `record.channels`) of the carrier with the highest
/// `S = (P + eta_b) / 2`, with every candidate's score.
pub fn select_channel(record: &MultiChannelRecord, params: &PurificationParams) -> Result<(usize, Vec<ChannelScore>)> {
    let cands = candidates(record, params, &mut Vec::new());
    let scores: Vec<ChannelScore> = cands.into_iter().map(|c| c.score).collect();
    let best = selection::best_score(&scores)?;
    Ok((scores[best].index, scores))
}

/// Quality gate, static elimination on every valid channel, carrier
/// selection and motion-artifact removal on the winner.
pub fn purify(record: &MultiChannelRecord, options: &PurifyOptions) -> Result<PulseSegment> {
    options.params.validate()?;
    record.check_shape()?;
    let report = assess(record, &options.thresholds);
    if !report.pass && !options.force {
        return Err(Error::QualityGate(
            report.reason.clone().unwrap_or_else(|| "quality gate failed".into()),
        ));
    }
    let mut channels = Vec::new();
    let cands = candidates(record, &options.params, &mut channels);
    let scores: Vec<ChannelScore> = cands.iter().map(|c| c.score.clone()).collect();
    let best = selection::best_score(&scores)?;
    let winner = &cands[best];
    let samples = remove_motion_artifacts(&winner.elim.phase.phase)?;
    info!(
        "selected channel {} ({} Hz), S = {:.3}, {} rectified windows",
        winner.score.index, winner.score.carrier, winner.score.score, winner.elim.rectified
    );
    Ok(PulseSegment {
        samples,
        rate: record.rate,
        source_carrier: winner.score.carrier,
        label: None,
        provenance: PurificationTrace {
            chosen_index: winner.score.index,
            chosen_carrier: winner.score.carrier,
            rectified_windows: winner.elim.rectified,
            scores,
            channels,
            windows: winner.elim.windows.clone(),
            quality: Some(report),
            forced: options.force,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extraction::extract_all;
    use crate::probe::{ChannelScenario, ProbeConfig};
    use crate::synth::{simulate_recording, RecordingSpec};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn record() -> &'static MultiChannelRecord {
        static REC: OnceLock<MultiChannelRecord> = OnceLock::new();
        REC.get_or_init(|| {
            let spec = RecordingSpec {
                rhythm: Rhythm::Af,
                mean_rr: 0.8,
                beat_seed: 5,
                probe: ProbeConfig::default(),
                scenario: ChannelScenario {
                    static_offset: [0.03, -0.02],
                    phase_offset: 1.1,
                    noise_snr_db: Some(15.0),
                    noise_seed: 8,
                    ..Default::default()
                },
            };
            let sim = simulate_recording(&spec).unwrap();
            extract_all(&sim.audio, &spec.probe).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn selection_ignores_channel_rescaling(which in 0usize..4, k in 0.05..20.0f64) {
            let params = PurificationParams::default();
            let base = record();
            let mut scaled = base.clone();
            let ch = &mut scaled.channels[which];
            for v in ch.i.iter_mut().chain(ch.q.iter_mut()) {
                *v *= k;
            }
            let (a, sa) = select_channel(base, &params).unwrap();
            let (b, sb) = select_channel(&scaled, &params).unwrap();
            prop_assert_eq!(a, b);
            for (x, y) in sa.iter().zip(&sb) {
                prop_assert!((x.score - y.score).abs() < 1e-9, "{} vs {}", x.score, y.score);
            }
        }
    }
}
