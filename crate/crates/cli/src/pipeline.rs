//! Stage plumbing shared by the subcommands: any input file is carried as
//! far as a purified pulse segment.

use std::path::Path;

use afsense_core::extraction::extract_all;
use afsense_core::io::manifest::ManifestEntry;
use afsense_core::io::wav::read_wav;
use afsense_core::purification::{purify, PulseSegment, PurifyOptions};
use afsense_core::quality::{assess, QualityReport};
use afsense_core::{MultiChannelRecord, Rhythm};
use afsense_detector::Dataset;
use anyhow::{bail, Context, Result};
use log::warn;

use crate::artifact::{kind, peek_kind, read_artifact};
use crate::config::PipelineConfig;

pub enum Stage {
    Record(MultiChannelRecord),
    Segment(PulseSegment),
    QualityFailed(QualityReport),
}

pub enum Purified {
    Segment(PulseSegment),
    QualityFailed(QualityReport),
}

/// WAV files are demodulated; JSON artifacts are read at whatever stage
/// they hold.
pub fn load_stage(path: &Path, cfg: &PipelineConfig) -> Result<Stage> {
    let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        let audio = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(Stage::Record(extract_all(&audio, &cfg.probe)?));
    }
    Ok(match peek_kind(path)?.as_str() {
        kind::RECORD => Stage::Record(read_artifact::<MultiChannelRecord>(path, kind::RECORD)?.data),
        kind::SEGMENT => Stage::Segment(read_artifact::<PulseSegment>(path, kind::SEGMENT)?.data),
        kind::QUALITY_FAILURE => Stage::QualityFailed(read_artifact::<QualityReport>(path, kind::QUALITY_FAILURE)?.data),
        other => bail!("{}: cannot build a pulse segment from a {other} artifact", path.display()),
    })
}

pub fn purify_record(record: &MultiChannelRecord, cfg: &PipelineConfig, force: bool) -> Result<Purified> {
    let report = assess(record, &cfg.quality);
    if !report.pass && !force {
        return Ok(Purified::QualityFailed(report));
    }
    let options = PurifyOptions {
        params: cfg.purification,
        thresholds: cfg.quality,
        force,
    };
    Ok(Purified::Segment(purify(record, &options)?))
}

pub fn to_segment(stage: Stage, cfg: &PipelineConfig, force: bool) -> Result<Purified> {
    match stage {
        Stage::Record(r) => purify_record(&r, cfg, force),
        Stage::Segment(s) => Ok(Purified::Segment(s)),
        Stage::QualityFailed(q) => Ok(Purified::QualityFailed(q)),
    }
}

/// Purified, z-scored manifest entries plus the subjects and names of
/// entries dropped by the quality gate.
pub struct Corpus {
    pub data: Dataset,
    pub subjects: Vec<String>,
    pub names: Vec<String>,
    pub skipped: Vec<String>,
    /// Every subject listed in the manifest, including fully skipped ones.
    pub roster: Vec<String>,
}

pub fn load_corpus(entries: &[ManifestEntry], base: &Path, cfg: &PipelineConfig, force: bool) -> Result<Corpus> {
    let mut segs: Vec<(Vec<f64>, Rhythm)> = Vec::new();
    let mut corpus = Corpus {
        data: Dataset::default(),
        subjects: Vec::new(),
        names: Vec::new(),
        skipped: Vec::new(),
        roster: Vec::new(),
    };
    for e in entries {
        let name = relative_name(&e.path, base);
        if !corpus.roster.contains(&e.subject) {
            corpus.roster.push(e.subject.clone());
        }
        let stage = load_stage(&e.path, cfg).with_context(|| format!("manifest entry {name}"))?;
        match to_segment(stage, cfg, force).with_context(|| format!("manifest entry {name}"))? {
            Purified::Segment(s) => {
                segs.push((s.samples, e.label));
                corpus.subjects.push(e.subject.clone());
                corpus.names.push(name);
            }
            Purified::QualityFailed(q) => {
                warn!("{name}: quality gate failed ({}); skipped", q.reason.unwrap_or_default());
                corpus.skipped.push(name);
            }
        }
    }
    corpus.data = Dataset::from_segments(segs.iter().map(|(x, y)| (x.as_slice(), *y)))?;
    Ok(corpus)
}

pub fn relative_name(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).display().to_string()
}

pub fn subset(data: &Dataset, idx: &[usize]) -> Dataset {
    Dataset {
        inputs: idx.iter().map(|&i| data.inputs[i].clone()).collect(),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
    }
}
