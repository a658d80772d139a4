//! One function per subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use afsense_core::evaluation::{
    cross_validate, kfold, leave_one_subject_out, metrics, ConfusionMatrix, CrossValidationReport, FoldSplit, LosoReport,
    Metrics, Prediction,
};
use afsense_core::extraction::extract_all;
use afsense_core::io::manifest::{read_manifest, write_manifest, ManifestEntry};
use afsense_core::io::wav::{read_wav, write_wav};
use afsense_core::io::write_json;
use afsense_core::probe::BeatTrain;
use afsense_core::quality::{assess, QualityReport};
use afsense_core::synth::{derive_seed, plan_corpus, simulate_recording, CorpusSpec, RecordingSpec};
use afsense_core::{Error as CoreError, PhaseSeries, Rhythm};
use afsense_detector::{train, Dataset, Detection, DetectorModel, TrainConfig, TrainHistory, Verdict};
use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use crate::artifact::{emit, kind, Artifact, InputDigest, Provenance};
use crate::config::PipelineConfig;
use crate::pipeline::{load_corpus, load_stage, relative_name, subset, to_segment, Corpus, Purified, Stage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Quality gate failed or the detector abstained.
    QualityFail,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::QualityFail => 2,
        }
    }
}

/// Options shared by every subcommand after config resolution.
#[derive(Clone, Debug)]
pub struct Globals {
    pub config: PipelineConfig,
    pub seed_flag: Option<u64>,
    pub force: bool,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl Globals {
    /// Defaults, then the config file, then flags. Derived seeds are written
    /// into the resolved config so outputs show the values actually used.
    pub fn resolve(
        config_path: Option<&Path>,
        seed: Option<u64>,
        force: bool,
        out: Option<PathBuf>,
        model: Option<PathBuf>,
    ) -> Result<Self> {
        let mut config = match config_path {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        config.training.seed = derive_seed(config.seed, "detector/train");
        config.validate()?;
        Ok(Self {
            config,
            seed_flag: seed,
            force,
            out,
            model,
        })
    }

    fn out_required(&self, what: &str) -> Result<&Path> {
        self.out.as_deref().with_context(|| format!("{what} needs --out"))
    }

    fn model_required(&self) -> Result<&Path> {
        self.model.as_deref().context("this subcommand needs --model")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundTruth {
    pub id: String,
    pub subject: String,
    pub group: String,
    pub corpus_seed: u64,
    pub spec: RecordingSpec,
    pub beats: BeatTrain,
    /// Rendered cardiac phase at the working rate.
    pub truth: PhaseSeries,
}

pub fn synth(g: &Globals, scenario: &Path) -> Result<Outcome> {
    let out = g.out_required("synth")?;
    let text = std::fs::read_to_string(scenario).with_context(|| format!("reading {}", scenario.display()))?;
    let mut spec = CorpusSpec::from_toml(&text).with_context(|| format!("parsing {}", scenario.display()))?;
    if let Some(s) = g.seed_flag {
        spec.seed = s;
    }
    let plan = plan_corpus(&spec)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let prov = Provenance::new("synth", &g.config, vec![InputDigest::of_file(scenario)?]);
    let mut entries = Vec::with_capacity(plan.len());
    for p in plan {
        let sim = simulate_recording(&p.spec)?;
        let wav = out.join(format!("{}.wav", p.id));
        write_wav(&wav, &sim.audio).with_context(|| format!("writing {}", wav.display()))?;
        let truth = Artifact {
            kind: kind::TRUTH.into(),
            provenance: prov.clone(),
            data: GroundTruth {
                id: p.id.clone(),
                subject: p.subject.clone(),
                group: p.group.clone(),
                corpus_seed: spec.seed,
                spec: p.spec.clone(),
                beats: sim.beats,
                truth: sim.truth,
            },
        };
        emit(Some(&out.join(format!("{}.json", p.id))), &truth)?;
        info!("wrote {}", wav.display());
        entries.push(ManifestEntry {
            path: wav,
            label: p.spec.rhythm,
            subject: p.subject,
            scenario: p.group,
        });
    }
    write_manifest(&out.join("manifest.tsv"), &entries)?;
    Ok(Outcome::Success)
}

pub fn extract(g: &Globals, input: &Path) -> Result<Outcome> {
    let audio = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
    let record = extract_all(&audio, &g.config.probe)?;
    let art = Artifact {
        kind: kind::RECORD.into(),
        provenance: Provenance::new("extract", &g.config, vec![InputDigest::of_file(input)?]),
        data: record,
    };
    emit(g.out.as_deref(), &art)?;
    Ok(Outcome::Success)
}

pub fn assess_cmd(g: &Globals, input: &Path) -> Result<Outcome> {
    let record = match load_stage(input, &g.config)? {
        Stage::Record(r) => r,
        _ => bail!("{}: assess needs a WAV file or a {} artifact", input.display(), kind::RECORD),
    };
    let report = assess(&record, &g.config.quality);
    let pass = report.pass;
    let art = Artifact {
        kind: kind::QUALITY.into(),
        provenance: Provenance::new("assess", &g.config, vec![InputDigest::of_file(input)?]),
        data: report,
    };
    emit(g.out.as_deref(), &art)?;
    Ok(if pass { Outcome::Success } else { Outcome::QualityFail })
}

pub fn purify_cmd(g: &Globals, input: &Path) -> Result<Outcome> {
    let stage = load_stage(input, &g.config)?;
    if !matches!(stage, Stage::Record(_)) {
        bail!("{}: purify needs a WAV file or a {} artifact", input.display(), kind::RECORD);
    }
    let prov = Provenance::new("purify", &g.config, vec![InputDigest::of_file(input)?]);
    match to_segment(stage, &g.config, g.force)? {
        Purified::Segment(seg) => {
            emit(
                g.out.as_deref(),
                &Artifact {
                    kind: kind::SEGMENT.into(),
                    provenance: prov,
                    data: seg,
                },
            )?;
            Ok(Outcome::Success)
        }
        Purified::QualityFailed(report) => {
            emit(
                g.out.as_deref(),
                &Artifact {
                    kind: kind::QUALITY_FAILURE.into(),
                    provenance: prov,
                    data: report,
                },
            )?;
            Ok(Outcome::QualityFail)
        }
    }
}

/// Digests of a manifest and every file it lists.
fn manifest_digests(manifest: &Path, entries: &[ManifestEntry]) -> Result<Vec<InputDigest>> {
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut out = vec![InputDigest::of_file(manifest)?];
    for e in entries {
        out.push(InputDigest::of(&e.path, relative_name(&e.path, base))?);
    }
    Ok(out)
}

fn load_manifest_corpus(g: &Globals, manifest: &Path) -> Result<(Vec<ManifestEntry>, Corpus)> {
    let entries = read_manifest(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    if entries.is_empty() {
        bail!("{} lists no records", manifest.display());
    }
    let base = manifest.parent().unwrap_or(Path::new(""));
    let corpus = load_corpus(&entries, base, &g.config, g.force)?;
    Ok((entries, corpus))
}

/// Fresh model trained on `train_idx` with early stopping on `val_idx`.
pub fn fit(config: &PipelineConfig, data: &Dataset, train_idx: &[usize], val_idx: &[usize], seed_label: &str) -> Result<(DetectorModel, TrainHistory)> {
    let mut model = DetectorModel::new(config.detector.clone(), derive_seed(config.seed, "detector/init"))?;
    let tc = TrainConfig {
        seed: derive_seed(config.seed, seed_label),
        ..config.training.clone()
    };
    let history = train(&mut model, &subset(data, train_idx), &subset(data, val_idx), &tc)?;
    Ok((model, history))
}

pub fn train_cmd(g: &Globals, manifest: &Path) -> Result<Outcome> {
    let out = g.out_required("train")?;
    let (entries, corpus) = load_manifest_corpus(g, manifest)?;
    let all: Vec<usize> = (0..corpus.data.len()).collect();
    let (tr, val) = afsense_core::evaluation::validation_split(
        &all,
        &corpus.data.labels,
        g.config.evaluation.validation_fraction,
        derive_seed(g.config.seed, "split"),
    );
    info!("training on {} segments, validating on {}, {} skipped", tr.len(), val.len(), corpus.skipped.len());
    let (mut model, history) = fit(&g.config, &corpus.data, &tr, &val, "detector/train")?;
    let prov = Provenance::new("train", &g.config, manifest_digests(manifest, &entries)?);
    model.metadata.extra = serde_json::json!({ "provenance": prov, "skipped": corpus.skipped });
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    info!("best epoch {} with validation F1 {:.3}", history.best_epoch, history.best_val_f1);
    Ok(Outcome::Success)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectOutput {
    pub input: String,
    #[serde(flatten)]
    pub verdict: Verdict,
    #[serde(default)]
    pub source_carrier: Option<f64>,
    #[serde(default)]
    pub quality: Option<QualityReport>,
}

pub fn detect(g: &Globals, input: &Path) -> Result<Outcome> {
    let model_path = g.model_required()?;
    let model = DetectorModel::load(model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let stage = load_stage(input, &g.config)?;
    let (verdict, carrier, quality) = match to_segment(stage, &g.config, g.force)? {
        Purified::Segment(seg) => (model.predict_segment(&seg)?, Some(seg.source_carrier), seg.provenance.quality.clone()),
        Purified::QualityFailed(q) => (
            Verdict::Abstain {
                reason: q.reason.clone().unwrap_or_else(|| "quality gate failed".into()),
            },
            None,
            Some(q),
        ),
    };
    let outcome = match verdict {
        Verdict::Detected(_) => Outcome::Success,
        Verdict::Abstain { .. } => Outcome::QualityFail,
    };
    let art = Artifact {
        kind: kind::VERDICT.into(),
        provenance: Provenance::new(
            "detect",
            &g.config,
            vec![InputDigest::of_file(input)?, InputDigest::of_file(model_path)?],
        ),
        data: DetectOutput {
            input: input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            verdict,
            source_carrier: carrier,
            quality,
        },
    };
    emit(g.out.as_deref(), &art)?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Holdout,
    KFold(usize),
    Loso,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalReport {
    Holdout {
        accumulated: ConfusionMatrix,
        metrics: Metrics,
        predictions: Vec<Prediction>,
    },
    Kfold(CrossValidationReport),
    Loso(LosoReport),
}

impl EvalReport {
    pub fn metrics(&self) -> &Metrics {
        match self {
            EvalReport::Holdout { metrics, .. } => metrics,
            EvalReport::Kfold(r) => &r.metrics,
            EvalReport::Loso(r) => &r.cross_validation.metrics,
        }
    }

    pub fn predictions(&self) -> &[Prediction] {
        match self {
            EvalReport::Holdout { predictions, .. } => predictions,
            EvalReport::Kfold(r) => &r.predictions,
            EvalReport::Loso(r) => &r.cross_validation.predictions,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: EvalReport,
    /// Evaluated records, indexed by `Prediction::index`.
    pub records: Vec<String>,
    pub subjects: Vec<String>,
    /// Records dropped by the quality gate.
    pub skipped: Vec<String>,
}

fn predict_dataset(model: &DetectorModel, data: &Dataset) -> Result<Vec<Detection>> {
    Ok(model
        .probabilities(&data.inputs)?
        .into_iter()
        .map(Detection::from_probabilities)
        .collect())
}

pub fn evaluate(g: &Globals, manifest: &Path, mode: EvalMode) -> Result<EvalOutput> {
    let (_, corpus) = load_manifest_corpus(g, manifest)?;
    let labels = corpus.data.labels.clone();
    let data = &corpus.data;
    let fit_predict = |label: &str| {
        let label = label.to_string();
        move |split: &FoldSplit| -> afsense_core::Result<Vec<(Rhythm, f64)>> {
            let run = || -> Result<Vec<(Rhythm, f64)>> {
                let (model, h) = fit(&g.config, data, &split.train, &split.validation, &format!("{label}/fold{}", split.fold))?;
                info!("fold {}: best epoch {} (validation F1 {:.3})", split.fold, h.best_epoch, h.best_val_f1);
                let test = subset(data, &split.test);
                Ok(predict_dataset(&model, &test)?.into_iter().map(|d| (d.label, d.prob_af)).collect())
            };
            run().map_err(|e| CoreError::Config(format!("fold {}: {e:#}", split.fold)))
        }
    };
    let report = match mode {
        EvalMode::Holdout => {
            let model_path = g.model_required()?;
            let model = DetectorModel::load(model_path).with_context(|| format!("loading {}", model_path.display()))?;
            let dets = predict_dataset(&model, &corpus.data)?;
            let predictions: Vec<Prediction> = dets
                .iter()
                .zip(&labels)
                .enumerate()
                .map(|(index, (d, &label))| Prediction {
                    index,
                    fold: 0,
                    label,
                    predicted: d.label,
                    prob_af: d.prob_af,
                })
                .collect();
            let cm = ConfusionMatrix::from_pairs(predictions.iter().map(|p| (p.predicted, p.label)));
            EvalReport::Holdout {
                accumulated: cm,
                metrics: metrics(&cm),
                predictions,
            }
        }
        EvalMode::KFold(k) => {
            let plan = kfold(&labels, k, derive_seed(g.config.seed, "folds"))?;
            EvalReport::Kfold(cross_validate(&labels, &plan, g.config.evaluation.validation_fraction, fit_predict("kfold"))?)
        }
        EvalMode::Loso => EvalReport::Loso(leave_one_subject_out(
            &labels,
            &corpus.subjects,
            &corpus.roster,
            derive_seed(g.config.seed, "folds"),
            fit_predict("loso"),
        )?),
    };
    Ok(EvalOutput {
        report,
        records: corpus.names,
        subjects: corpus.subjects,
        skipped: corpus.skipped,
    })
}

pub fn eval_cmd(g: &Globals, manifest: &Path, mode: EvalMode) -> Result<Outcome> {
    let out = g.out_required("eval")?;
    let entries = read_manifest(manifest)?;
    let result = evaluate(g, manifest, mode)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut inputs = manifest_digests(manifest, &entries)?;
    if let (EvalReport::Holdout { .. }, Some(m)) = (&result.report, g.model.as_deref()) {
        inputs.push(InputDigest::of_file(m)?);
    }
    let mut table = result.report.metrics().table();
    match &result.report {
        EvalReport::Loso(r) => {
            let _ = writeln!(table, "subject accuracy: mean {:.4}, std {:.4}", r.mean_accuracy, r.std_accuracy);
        }
        EvalReport::Kfold(r) => {
            let _ = writeln!(table, "folds: {}", r.plan.k);
        }
        EvalReport::Holdout { .. } => {}
    }
    std::fs::write(out.join("metrics.txt"), &table)?;
    let mut csv = String::from("index,record,subject,fold,label,predicted,prob_af\n");
    for p in result.report.predictions() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            p.index, result.records[p.index], result.subjects[p.index], p.fold, p.label, p.predicted, p.prob_af
        );
    }
    std::fs::write(out.join("predictions.csv"), csv)?;
    write_json(
        &out.join("metrics.json"),
        &Artifact {
            kind: kind::EVALUATION.into(),
            provenance: Provenance::new("eval", &g.config, inputs),
            data: result,
        },
    )?;
    print!("{table}");
    Ok(Outcome::Success)
}
