//! Sliding-window static component elimination.

use std::ops::Range;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::arc::{self, ArcCenterEstimate, Point};
use crate::dsp::Sos;
use crate::error::{Error, Result};
use crate::extraction::{phase_of, unwrap};
use crate::signal::{IqSeries, PhaseSeries};

const SMOOTHING_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PurificationParams {
    pub window_seconds: f64,
    pub hop_seconds: f64,
    pub eta: f64,
    /// Rectification fires when the centre direction moves by more than this.
    pub gate_angle: f64,
    pub crossfade_seconds: f64,
    /// Zero-phase lowpass applied to the I/Q points used for arc-centre
    /// estimation; 0 disables it. The output phase and the explained-ratio
    /// score use the unsmoothed points.
    pub smoothing_hz: f64,
}

impl Default for PurificationParams {
    fn default() -> Self {
        Self {
            window_seconds: 2.5,
            hop_seconds: 0.5,
            eta: arc::DEFAULT_ETA,
            gate_angle: std::f64::consts::FRAC_PI_6,
            crossfade_seconds: 0.1,
            smoothing_hz: 8.0,
        }
    }
}

impl PurificationParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.window_seconds > 0.0
            && self.hop_seconds > 0.0
            && self.eta > 0.0
            && (0.0..=std::f64::consts::PI).contains(&self.gate_angle)
            && self.crossfade_seconds >= 0.0
            && self.smoothing_hz >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid purification parameters {self:?}")))
        }
    }

    pub fn window_len(&self, rate: f64) -> usize {
        (self.window_seconds * rate).round() as usize
    }

    pub fn hop_len(&self, rate: f64) -> usize {
        ((self.hop_seconds * rate).round() as usize).max(1)
    }

    /// Points the arc geometry is estimated on.
    pub fn estimation_points(&self, iq: &IqSeries) -> Result<Vec<Point>> {
        if self.smoothing_hz == 0.0 {
            return Ok(iq.points());
        }
        let lp = Sos::butter_lowpass(SMOOTHING_ORDER, self.smoothing_hz, iq.rate)?;
        let pad = (iq.rate / 2.0) as usize;
        let i = lp.filtfilt(&iq.i, pad);
        let q = lp.filtfilt(&iq.q, pad);
        Ok(i.into_iter().zip(q).map(|(a, b)| [a, b]).collect())
    }

    pub fn crossfade_len(&self, rate: f64) -> usize {
        (self.crossfade_seconds * rate).round() as usize
    }
}

/// Full windows over `n` samples; a short tail is merged into the last one.
pub fn window_ranges(n: usize, window: usize, hop: usize) -> Vec<Range<usize>> {
    if window == 0 || n < window {
        return Vec::new();
    }
    let mut out: Vec<Range<usize>> = (0..=(n - window) / hop)
        .map(|k| k * hop..k * hop + window)
        .collect();
    if let Some(last) = out.last_mut() {
        last.end = n;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAction {
    Kept,
    Rectified,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub start: usize,
    pub end: usize,
    pub action: WindowAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<ArcCenterEstimate>,
    /// Angle between the current centre direction and the estimated one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<f64>,
    pub low_quality: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticElimination {
    pub phase: PhaseSeries,
    pub windows: Vec<WindowLog>,
    pub rectified: usize,
    /// Every window was degenerate; `phase` is the plain unwrapped angle.
    pub pass_through: bool,
}

pub fn eliminate_static(iq: &IqSeries, params: &PurificationParams) -> Result<StaticElimination> {
    params.validate()?;
    let points = iq.points();
    let smooth = params.estimation_points(iq)?;
    let window = params.window_len(iq.rate);
    let ranges = window_ranges(points.len(), window, params.hop_len(iq.rate));
    if ranges.is_empty() || window < 3 {
        return Err(Error::Length {
            found: points.len(),
            remedy: format!("static elimination needs at least one {window}-sample window"),
        });
    }

    let mut center: Point = [0.0, 0.0];
    let mut previous_d: Option<Point> = None;
    let mut segments: Vec<(usize, Point)> = vec![(0, center)];
    let mut logs = Vec::with_capacity(ranges.len());
    let mut rectified = 0;
    let mut usable = 0;

    for r in ranges {
        let mut log = WindowLog {
            start: r.start,
            end: r.end,
            action: WindowAction::Skipped,
            estimate: None,
            angle: None,
            low_quality: false,
            note: None,
        };
        match arc::estimate_center(&smooth[r.clone()], params.eta, previous_d) {
            Err(e) => {
                debug!("window {}..{} skipped: {e}", r.start, r.end);
                log.note = Some(e.to_string());
            }
            Ok(est) => {
                usable += 1;
                previous_d = Some(est.diastolic_dir);
                log.low_quality = est.explained_ratio < arc::LOW_QUALITY_RATIO;
                let actual = arc::sub(center, est.centroid);
                let angle = if arc::norm(actual) > 0.0 {
                    arc::angle_between(actual, est.arc_dir)
                } else {
                    std::f64::consts::PI
                };
                log.angle = Some(angle);
                if angle > params.gate_angle {
                    center = est.center;
                    match segments.last_mut() {
                        Some(last) if last.0 == r.start => last.1 = center,
                        _ => segments.push((r.start, center)),
                    }
                    rectified += 1;
                    log.action = WindowAction::Rectified;
                } else {
                    log.action = WindowAction::Kept;
                }
                log.estimate = Some(est);
            }
        }
        logs.push(log);
    }

    if usable == 0 {
        warn!("every window degenerate at carrier {} Hz; passing phase through", iq.carrier);
        return Ok(StaticElimination {
            phase: phase_of(iq)?,
            windows: logs,
            rectified: 0,
            pass_through: true,
        });
    }
    let phase = stitch(&points, &segments, params.crossfade_len(iq.rate));
    Ok(StaticElimination {
        phase: PhaseSeries::new(phase, iq.rate, iq.carrier),
        windows: logs,
        rectified,
        pass_through: false,
    })
}

/// Unwrapped angle of `points` about each segment's centre, offset-aligned
/// and linearly cross-faded over `fade` samples at every junction.
fn stitch(points: &[Point], segments: &[(usize, Point)], fade: usize) -> Vec<f64> {
    let n = points.len();
    let mut out = Vec::with_capacity(n);
    // Previous segment's phase carried past its end, for the cross-fade.
    let mut tail: Vec<f64> = Vec::new();
    for (k, &(start, c)) in segments.iter().enumerate() {
        let end = segments.get(k + 1).map_or(n, |s| s.0);
        let stop = (end + fade.max(1)).min(n);
        let raw: Vec<f64> = points[start..stop]
            .iter()
            .map(|p| (p[1] - c[1]).atan2(p[0] - c[0]))
            .collect();
        let mut ph = unwrap(&raw);
        if let Some(&first_old) = tail.first() {
            let offset = first_old - ph[0];
            ph.iter_mut().for_each(|v| *v += offset);
            let m = fade.min(end - start).min(tail.len());
            for j in 0..m {
                let w = j as f64 / fade as f64;
                ph[j] = (1.0 - w) * tail[j] + w * ph[j];
            }
        }
        out.extend_from_slice(&ph[..end - start]);
        tail = ph[end - start..].to_vec();
    }
    out
}

/// Mean explained-variance ratio of the trajectory PCA over all windows.
pub fn pca_explained_ratio(iq: &IqSeries, params: &PurificationParams) -> Result<f64> {
    let points = iq.points();
    let ranges = window_ranges(points.len(), params.window_len(iq.rate), params.hop_len(iq.rate));
    let ratios: Vec<f64> = ranges
        .into_iter()
        .filter_map(|r| arc::primary_direction(&arc::trajectory_vectors(&points[r])).ok())
        .map(|pd| pd.explained_ratio)
        .collect();
    if ratios.is_empty() {
        return Err(Error::DegenerateSignal("no usable PCA window".into()));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::stats::pearson;
    use crate::probe::{generate_beat_train, render_phase_track, ChannelScenario};
    use crate::signal::Rhythm;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn windows_cover_segment() {
        let r = window_ranges(3840, 320, 64);
        assert_eq!(r.len(), 56);
        assert_eq!(r[0], 0..320);
        assert_eq!(r[55], 3520..3840);
        let r = window_ranges(3850, 320, 64);
        assert_eq!(r.last().unwrap().end, 3850);
        assert!(window_ranges(100, 320, 64).is_empty());
    }

    /// I/Q of a simulated track, demodulated analytically: `r e^{i theta} + s`.
    fn analytic_iq(theta: &[f64], r: f64, s: Point, sign: f64) -> IqSeries {
        let pts: Vec<Point> = theta
            .iter()
            .map(|t| [r * (sign * t).cos() + s[0], r * (sign * t).sin() + s[1]])
            .collect();
        IqSeries::from_points(&pts, 128.0, 18_000.0)
    }

    fn track(seed: u64, amp: f64) -> Vec<f64> {
        let beats = generate_beat_train(Rhythm::Nsr, 30.0, seed);
        let sc = ChannelScenario {
            phase_amplitude: amp,
            ..Default::default()
        };
        render_phase_track(&beats, &sc, 128.0).unwrap().phase
    }

    #[test]
    fn centered_iq_is_passed_through() {
        let th = track(1, 0.3);
        let iq = analytic_iq(&th, 0.125, [0.0, 0.0], 1.0);
        let out = eliminate_static(&iq, &PurificationParams::default()).unwrap();
        assert_eq!(out.rectified, 0);
        assert_eq!(out.phase.phase, phase_of(&iq).unwrap().phase);
        assert_eq!(out.windows.len(), 56);
    }

    #[test]
    fn inverted_channel_sign_is_restored() {
        let th = track(2, 0.3);
        let iq = analytic_iq(&th, 0.125, [0.01, -0.02], -1.0);
        let raw = phase_of(&iq).unwrap();
        assert!(pearson(&raw.phase, &th).unwrap() < 0.0);
        let out = eliminate_static(&iq, &PurificationParams::default()).unwrap();
        assert!(out.rectified >= 1);
        assert!(pearson(&out.phase.phase, &th).unwrap() >= 0.9);
    }

    #[test]
    fn blurred_arc_is_recovered() {
        let th = track(3, 0.3);
        let r = 0.125;
        // Tangent point where (theta - mid)^2 is uncorrelated with theta.
        let sq: Vec<f64> = th.iter().map(|t| t * t).collect();
        let m = crate::dsp::stats::mean(&th);
        let m2 = crate::dsp::stats::mean(&sq);
        let m3 = th.iter().map(|t| t * t * t).sum::<f64>() / th.len() as f64;
        let mid = (m3 - m2 * m) / (2.0 * crate::dsp::stats::variance(&th));
        let chord = 2.0 * r * (0.15f64).sin();
        // Static offset that puts the origin on the arc's tangent line, ten
        // chords from the arc midpoint: the raw angle then barely moves.
        let l = 10.0 * chord;
        let s = [-r * mid.cos() - l * mid.sin(), -r * mid.sin() + l * mid.cos()];
        let iq = analytic_iq(&th, r, s, 1.0);
        let raw = phase_of(&iq).unwrap();
        assert!(pearson(&raw.phase, &th).unwrap() < 0.5);
        let out = eliminate_static(&iq, &PurificationParams::default()).unwrap();
        assert!(pearson(&out.phase.phase, &th).unwrap() >= 0.9);
    }

    #[test]
    fn stitched_phase_is_continuous() {
        let th = track(4, 0.3);
        let iq = analytic_iq(&th, 0.125, [0.02, -0.2], -1.0);
        let out = eliminate_static(&iq, &PurificationParams::default()).unwrap();
        let jumps = out.phase.phase.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        assert!(jumps < 0.5, "max step {jumps}");
        assert!(out.phase.phase.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn all_degenerate_windows_pass_through() {
        let iq = IqSeries::new(vec![0.1; 3840], vec![0.0; 3840], 128.0, 18_000.0).unwrap();
        let out = eliminate_static(&iq, &PurificationParams::default()).unwrap();
        assert!(out.pass_through);
        assert!(out.windows.iter().all(|w| w.action == WindowAction::Skipped));
    }

    #[test]
    fn short_input_is_rejected() {
        let iq = IqSeries::new(vec![0.1; 100], vec![0.0; 100], 128.0, 18_000.0).unwrap();
        assert!(matches!(
            eliminate_static(&iq, &PurificationParams::default()),
            Err(Error::Length { .. })
        ));
    }

    #[test]
    fn scaling_iq_keeps_output() {
        let th = track(5, 0.3);
        let iq = analytic_iq(&th, 0.125, [0.03, -0.1], -1.0);
        let big = IqSeries::from_points(
            &iq.points().iter().map(|p| [p[0] * 7.5, p[1] * 7.5]).collect::<Vec<_>>(),
            128.0,
            18_000.0,
        );
        let p = PurificationParams::default();
        let a = eliminate_static(&iq, &p).unwrap();
        let b = eliminate_static(&big, &p).unwrap();
        assert_eq!(a.rectified, b.rectified);
        for (x, y) in a.phase.phase.iter().zip(&b.phase.phase) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn explained_ratio_extremes() {
        let line: Vec<Point> = (0..3840).map(|k| [((k as f64) * 0.3).sin(), 0.0]).collect();
        let iq = IqSeries::from_points(&line, 128.0, 18_000.0);
        let p = pca_explained_ratio(&iq, &PurificationParams::default()).unwrap();
        assert!((p - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<Point> = (0..3840)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let iq = IqSeries::from_points(&noise, 128.0, 18_000.0);
        let p = pca_explained_ratio(&iq, &PurificationParams::default()).unwrap();
        assert!((p - 0.5).abs() < 0.05, "P = {p}");
    }

    #[test]
    fn noise_lowers_explained_ratio() {
        let th = track(6, 0.3);
        let clean = analytic_iq(&th, 0.125, [0.0, 0.0], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noisy: Vec<Point> = clean
            .points()
            .iter()
            .map(|p| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [p[0] + 0.01 * a, p[1] + 0.01 * b]
            })
            .collect();
        let noisy = IqSeries::from_points(&noisy, 128.0, 18_000.0);
        let params = PurificationParams::default();
        assert!(pca_explained_ratio(&clean, &params).unwrap() > pca_explained_ratio(&noisy, &params).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn output_is_scale_equivariant(seed in 0u64..40, k in 0.05..20.0f64, ang in -3.1..3.1f64, invert in any::<bool>()) {
            let th = track(seed, 0.3);
            let sign = if invert { -1.0 } else { 1.0 };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let iq = analytic_iq(&th, 0.125, [0.04 * ang.cos(), 0.04 * ang.sin()], sign);
            let pts: Vec<Point> = iq
                .points()
                .iter()
                .map(|p| {
                    let n: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    [p[0] + 0.002 * n[0], p[1] + 0.002 * n[1]]
                })
                .collect();
            let base = IqSeries::from_points(&pts, 128.0, 18_000.0);
            let scaled_pts: Vec<Point> = pts.iter().map(|p| [k * p[0], k * p[1]]).collect();
            let scaled = IqSeries::from_points(&scaled_pts, 128.0, 18_000.0);
            let a = eliminate_static(&base, &PurificationParams::default()).unwrap();
            let b = eliminate_static(&scaled, &PurificationParams::default()).unwrap();
            let actions = |e: &StaticElimination| e.windows.iter().map(|w| w.action).collect::<Vec<_>>();
            prop_assume!(actions(&a) == actions(&b));
            for (x, y) in a.phase.phase.iter().zip(&b.phase.phase) {
                prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }
}
