//! Labelled recordings and seeded corpora built on the channel simulator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::probe::{
    generate_beat_train_with, render_phase_track, simulate_received, BeatTrain, ChannelScenario, ProbeConfig,
    DEFAULT_MEAN_RR,
};
use crate::signal::{AudioBuffer, PhaseSeries, Rhythm, WORKING_RATE};

/// Rate the phase track is rendered at before interpolation to audio.
const TRACK_RATE: f64 = 1_000.0;

/// Everything needed to reproduce one simulated recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingSpec {
    pub rhythm: Rhythm,
    pub mean_rr: f64,
    pub beat_seed: u64,
    pub probe: ProbeConfig,
    pub scenario: ChannelScenario,
}

#[derive(Clone, Debug)]
pub struct SimulatedRecording {
    pub audio: AudioBuffer,
    pub beats: BeatTrain,
    /// Rendered cardiac phase (with drift) at the working rate.
    pub truth: PhaseSeries,
}

pub fn simulate_recording(spec: &RecordingSpec) -> Result<SimulatedRecording> {
    spec.probe.validate()?;
    let beats = generate_beat_train_with(spec.rhythm, spec.probe.duration, spec.mean_rr, spec.beat_seed);
    let ratio = (spec.probe.sample_rate / TRACK_RATE).round().max(1.0);
    let fine = render_phase_track(&beats, &spec.scenario, spec.probe.sample_rate / ratio)?;
    let audio = simulate_received(&spec.probe, &fine, &spec.scenario)?;
    let truth = render_phase_track(&beats, &spec.scenario, WORKING_RATE)?;
    Ok(SimulatedRecording { audio, beats, truth })
}

/// A block of recordings sharing rhythm, subject and scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub rhythm: Rhythm,
    pub count: usize,
    #[serde(default = "default_subject")]
    pub subject: String,
    /// Free-form tag copied into the manifest.
    #[serde(default = "default_scenario_name")]
    pub name: String,
    #[serde(default)]
    pub scenario: ChannelScenario,
    /// Draw subject traits and per-record phase offset, static-offset
    /// direction and mean RR instead of using `scenario` verbatim.
    #[serde(default = "default_true")]
    pub randomize: bool,
}

fn default_subject() -> String {
    "s00".into()
}

fn default_scenario_name() -> String {
    "default".into()
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(rename = "group", default)]
    pub groups: Vec<GroupSpec>,
}

impl CorpusSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        if self.groups.is_empty() {
            return Err(Error::Config("corpus has no [[group]] entries".into()));
        }
        for g in &self.groups {
            g.scenario.validate()?;
            if g.subject.is_empty() || g.subject.contains(['\t', '\n', '/']) {
                return Err(Error::Config(format!("invalid subject name {:?}", g.subject)));
            }
        }
        Ok(())
    }
}

/// 1-based line containing byte `offset`.
pub fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedRecording {
    pub id: String,
    pub subject: String,
    pub group: String,
    pub spec: RecordingSpec,
}

/// Stable 64-bit seed from a root seed and a label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Per-subject physiology, fixed across that subject's recordings.
struct SubjectTraits {
    mean_rr: f64,
    amplitude_scale: f64,
    static_scale: f64,
}

fn subject_traits(root: u64, subject: &str) -> SubjectTraits {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, &format!("subject/{subject}")));
    SubjectTraits {
        mean_rr: rng.random_range(0.65..1.0),
        amplitude_scale: rng.random_range(0.8..1.2),
        static_scale: rng.random_range(0.5..1.5),
    }
}

/// Expands a corpus into concrete, individually seeded recordings.
pub fn plan_corpus(spec: &CorpusSpec) -> Result<Vec<PlannedRecording>> {
    spec.validate()?;
    let mut out = Vec::new();
    for (gi, g) in spec.groups.iter().enumerate() {
        let traits = subject_traits(spec.seed, &g.subject);
        for k in 0..g.count {
            let id = format!("{}_{}_g{gi:02}_{k:04}", g.subject, g.rhythm);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("record/{id}")));
            let mut scenario = g.scenario.clone();
            let mut mean_rr = DEFAULT_MEAN_RR;
            scenario.noise_seed = rng.random();
            let beat_seed = rng.random();
            if g.randomize {
                mean_rr = traits.mean_rr * rng.random_range(0.95..1.05);
                scenario.phase_amplitude = (scenario.phase_amplitude * traits.amplitude_scale).min(1.0);
                scenario.phase_offset = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let mag = scenario.static_offset[0].hypot(scenario.static_offset[1]) * traits.static_scale;
                let ang: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                scenario.static_offset = [mag * ang.cos(), mag * ang.sin()];
            }
            out.push(PlannedRecording {
                id,
                subject: g.subject.clone(),
                group: g.name.clone(),
                spec: RecordingSpec {
                    rhythm: g.rhythm,
                    mean_rr,
                    beat_seed,
                    probe: spec.probe.clone(),
                    scenario,
                },
            });
        }
    }
    Ok(out)
}
