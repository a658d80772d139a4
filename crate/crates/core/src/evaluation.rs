//! Confusion matrices, the five detection metrics and cross-validation
//! protocols. AF is the positive class.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dsp::stats;
use crate::error::{Error, Result};
use crate::signal::Rhythm;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, predicted: Rhythm, actual: Rhythm) {
        match (predicted.is_af(), actual.is_af()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Rhythm, Rhythm)>) -> Self {
        let mut cm = Self::default();
        for (p, a) in pairs {
            cm.record(p, a);
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Serializes `None` as the string `"undefined"`.
mod undefined {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("undefined"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Some(x)),
            Raw::Text(t) if t == "undefined" => Ok(None),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"undefined\", got {t:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(with = "undefined")]
    pub accuracy: Option<f64>,
    #[serde(with = "undefined")]
    pub precision: Option<f64>,
    #[serde(with = "undefined")]
    pub recall: Option<f64>,
    #[serde(with = "undefined")]
    pub specificity: Option<f64>,
    #[serde(with = "undefined")]
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Zero denominators give `None`, never 0 or 1.
pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Metrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        f1,
    }
}

impl Metrics {
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
        format!(
            "accuracy     {}\nprecision    {}\nrecall       {}\nspecificity  {}\nf1           {}\n",
            fmt(self.accuracy),
            fmt(self.precision),
            fmt(self.recall),
            fmt(self.specificity),
            fmt(self.f1)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    Record,
    Subject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub mode: FoldMode,
    pub seed: u64,
    /// Fold of each record.
    pub assignments: Vec<usize>,
    /// Subject held out by each fold in subject mode.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fold_subjects: Vec<String>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Label-stratified record-level folds. Each class is shuffled and dealt
/// round-robin, continuing the deal across classes, so fold sizes differ by
/// at most one.
pub fn kfold(labels: &[Rhythm], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::Config(format!("k = {k} exceeds dataset size {}", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for class in [Rhythm::Af, Rhythm::Nsr] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan {
        k,
        mode: FoldMode::Record,
        seed,
        assignments,
        fold_subjects: Vec::new(),
    })
}

/// One fold per subject, subjects in lexical order.
pub fn subject_folds(subjects: &[String], seed: u64) -> Result<FoldPlan> {
    let names: Vec<String> = subjects.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if names.len() < 3 {
        return Err(Error::Config(format!(
            "leave-one-subject-out needs at least 3 subjects, found {}",
            names.len()
        )));
    }
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    Ok(FoldPlan {
        k: names.len(),
        mode: FoldMode::Subject,
        seed,
        assignments: subjects.iter().map(|s| index[s.as_str()]).collect(),
        fold_subjects: names,
    })
}

/// Splits `indices` into (train, validation) with about `fraction` of each
/// class in validation.
pub fn validation_split(indices: &[usize], labels: &[Rhythm], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [Rhythm::Af, Rhythm::Nsr] {
        let mut idx: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = if idx.len() >= 2 {
            ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Index sets handed to a fit-and-predict routine for one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub fold: usize,
    pub label: Rhythm,
    pub predicted: Rhythm,
    pub prob_af: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub plan: FoldPlan,
    pub per_fold: Vec<ConfusionMatrix>,
    pub accumulated: ConfusionMatrix,
    pub metrics: Metrics,
    pub predictions: Vec<Prediction>,
}

/// Runs every fold of `plan`. `fit_predict` trains on `split.train` (early
/// stopping on `split.validation`) and returns `(predicted, prob_af)` for
/// each index of `split.test`, in order.
pub fn cross_validate<F>(labels: &[Rhythm], plan: &FoldPlan, validation_fraction: f64, mut fit_predict: F) -> Result<CrossValidationReport>
where
    F: FnMut(&FoldSplit) -> Result<Vec<(Rhythm, f64)>>,
{
    let mut per_fold = Vec::with_capacity(plan.k);
    let mut predictions = Vec::new();
    for fold in 0..plan.k {
        let test = plan.test_indices(fold);
        let (train, validation) = validation_split(
            &plan.train_indices(fold),
            labels,
            validation_fraction,
            plan.seed.wrapping_add(fold as u64 + 1),
        );
        let split = FoldSplit {
            fold,
            train,
            validation,
            test,
        };
        let out = fit_predict(&split)?;
        if out.len() != split.test.len() {
            return Err(Error::Config(format!(
                "fold {fold}: {} predictions for {} test records",
                out.len(),
                split.test.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (&index, (predicted, prob_af)) in split.test.iter().zip(out) {
            cm.record(predicted, labels[index]);
            predictions.push(Prediction {
                index,
                fold,
                label: labels[index],
                predicted,
                prob_af,
            });
        }
        per_fold.push(cm);
    }
    let accumulated: ConfusionMatrix = per_fold.iter().copied().sum();
    Ok(CrossValidationReport {
        plan: plan.clone(),
        per_fold,
        accumulated,
        metrics: metrics(&accumulated),
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub subject: String,
    pub records: usize,
    pub cm: ConfusionMatrix,
    #[serde(with = "undefined")]
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub per_subject: Vec<SubjectResult>,
    pub skipped: Vec<String>,
    pub mean_accuracy: f64,
    /// Sample standard deviation across subjects.
    pub std_accuracy: f64,
    pub cross_validation: CrossValidationReport,
}

/// Leave-one-subject-out evaluation. Subjects in `roster` without any
/// record are skipped with a warning.
pub fn leave_one_subject_out<F>(
    labels: &[Rhythm],
    subjects: &[String],
    roster: &[String],
    seed: u64,
    fit_predict: F,
) -> Result<LosoReport>
where
    F: FnMut(&FoldSplit) -> Result<Vec<(Rhythm, f64)>>,
{
    let present: BTreeSet<&String> = subjects.iter().collect();
    let skipped: Vec<String> = roster.iter().filter(|s| !present.contains(s)).cloned().collect();
    for s in &skipped {
        warn!("subject {s} has no records; skipped");
    }
    let plan = subject_folds(subjects, seed)?;
    let cv = cross_validate(labels, &plan, 0.2, fit_predict)?;
    let per_subject: Vec<SubjectResult> = plan
        .fold_subjects
        .iter()
        .zip(&cv.per_fold)
        .map(|(s, cm)| SubjectResult {
            subject: s.clone(),
            records: cm.total() as usize,
            cm: *cm,
            accuracy: metrics(cm).accuracy,
        })
        .collect();
    let accs: Vec<f64> = per_subject.iter().filter_map(|r| r.accuracy).collect();
    let mean = stats::mean(&accs);
    let std = if accs.len() > 1 {
        (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(LosoReport {
        per_subject,
        skipped,
        mean_accuracy: mean,
        std_accuracy: std,
        cross_validation: cv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Rhythm::{Af, Nsr};

    fn cm(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    #[test]
    fn perfect_matrix() {
        let m = metrics(&cm(1, 0, 1, 0));
        for v in [m.accuracy, m.precision, m.recall, m.specificity, m.f1] {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn worked_example() {
        let m = metrics(&cm(3, 1, 5, 1));
        assert!((m.precision.unwrap() - 0.75).abs() < 1e-12);
        assert!((m.recall.unwrap() - 0.75).abs() < 1e-12);
        assert!((m.accuracy.unwrap() - 0.8).abs() < 1e-12);
        assert!((m.specificity.unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.f1.unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn undefined_metrics_serialize_as_token() {
        let m = metrics(&cm(0, 0, 4, 0));
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"precision\":\"undefined\""));
        let back: Metrics = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(metrics(&ConfusionMatrix::default()).accuracy, None);
        let json = serde_json::to_string(&cm(1, 2, 3, 4)).unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
    }

    #[test]
    fn twelve_records_six_folds() {
        let labels: Vec<Rhythm> = (0..12).map(|i| if i % 3 == 0 { Af } else { Nsr }).collect();
        let plan = kfold(&labels, 6, 3).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 6]);
        assert_eq!(plan, kfold(&labels, 6, 3).unwrap());
        assert!(kfold(&labels, 13, 3).is_err());
    }

    #[test]
    fn accumulated_is_sum_of_folds() {
        let labels: Vec<Rhythm> = (0..30).map(|i| if i % 2 == 0 { Af } else { Nsr }).collect();
        let plan = kfold(&labels, 6, 1).unwrap();
        let report = cross_validate(&labels, &plan, 0.2, |split| {
            Ok(split.test.iter().map(|&i| (if i % 4 == 0 { Af } else { Nsr }, 0.5)).collect())
        })
        .unwrap();
        let sum: ConfusionMatrix = report.per_fold.iter().copied().sum();
        assert_eq!(sum, report.accumulated);
        assert_eq!(report.accumulated.total(), 30);
        assert_eq!(report.predictions.len(), 30);
    }

    #[test]
    fn splits_are_disjoint() {
        let labels: Vec<Rhythm> = (0..40).map(|i| if i % 2 == 0 { Af } else { Nsr }).collect();
        let plan = kfold(&labels, 5, 2).unwrap();
        cross_validate(&labels, &plan, 0.2, |s| {
            let all: BTreeSet<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            assert_eq!(all.len(), s.train.len() + s.validation.len() + s.test.len());
            assert_eq!(all.len(), 40);
            assert!(s.validation.iter().any(|&i| labels[i] == Af));
            assert!(s.validation.iter().any(|&i| labels[i] == Nsr));
            Ok(vec![(Nsr, 0.0); s.test.len()])
        })
        .unwrap();
    }

    #[test]
    fn loso_shape_and_identical_subjects() {
        let subjects: Vec<String> = (0..30).map(|i| format!("s{}", i % 3)).collect();
        let labels: Vec<Rhythm> = (0..30).map(|i| if (i / 3) % 2 == 0 { Af } else { Nsr }).collect();
        let roster: Vec<String> = ["s0", "s1", "s2", "s9"].iter().map(|s| s.to_string()).collect();
        let report = leave_one_subject_out(&labels, &subjects, &roster, 4, |s| {
            // Stub classifier: always right.
            Ok(s.test.iter().map(|&i| (labels[i], 1.0)).collect())
        })
        .unwrap();
        assert_eq!(report.per_subject.len(), 3);
        assert_eq!(report.skipped, vec!["s9".to_string()]);
        assert_eq!(report.mean_accuracy, 1.0);
        assert_eq!(report.std_accuracy, 0.0);
        for r in &report.per_subject {
            let test_subjects: BTreeSet<_> = report
                .cross_validation
                .predictions
                .iter()
                .filter(|p| report.cross_validation.plan.fold_subjects[p.fold] == r.subject)
                .map(|p| &subjects[p.index])
                .collect();
            assert_eq!(test_subjects.len(), 1);
        }
        let two: Vec<String> = (0..10).map(|i| format!("s{}", i % 2)).collect();
        assert!(subject_folds(&two, 0).is_err());
    }

    fn brute_force(pairs: &[(bool, bool)]) -> [Option<f64>; 5] {
        let count = |f: &dyn Fn(bool, bool) -> bool| pairs.iter().filter(|(p, a)| f(*p, *a)).count() as f64;
        let tp = count(&|p, a| p && a);
        let fp = count(&|p, a| p && !a);
        let tn = count(&|p, a| !p && !a);
        let fn_ = count(&|p, a| !p && a);
        let div = |n: f64, d: f64| if d == 0.0 { None } else { Some(n / d) };
        let precision = div(tp, tp + fp);
        let recall = div(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(_), Some(_)) if tp == 0.0 => Some(0.0),
            (Some(_), Some(_)) => Some(2.0 * tp / (2.0 * tp + fp + fn_)),
            _ => None,
        };
        [div(tp + tn, pairs.len() as f64), precision, recall, div(tn, tn + fp), f1]
    }

    proptest! {
        #[test]
        fn metrics_match_brute_force(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
            let rh = |b: bool| if b { Af } else { Nsr };
            let m = metrics(&ConfusionMatrix::from_pairs(pairs.iter().map(|&(p, a)| (rh(p), rh(a)))));
            let got = [m.accuracy, m.precision, m.recall, m.specificity, m.f1];
            for (g, e) in got.iter().zip(brute_force(&pairs)) {
                match (g, e) {
                    (Some(g), Some(e)) => prop_assert!((g - e).abs() <= 1e-12),
                    (None, None) => {}
                    _ => prop_assert!(false, "definedness differs: {:?} vs {:?}", g, e),
                }
            }
            if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
                if p + r > 0.0 {
                    prop_assert!((f - 2.0 * p * r / (p + r)).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn folds_partition_records(n in 6usize..80, k in 2usize..6, seed in any::<u64>(), mask in any::<u64>()) {
            let labels: Vec<Rhythm> = (0..n).map(|i| if mask >> (i % 64) & 1 == 1 { Af } else { Nsr }).collect();
            let plan = kfold(&labels, k, seed).unwrap();
            let sizes = plan.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert!(plan.assignments.iter().all(|&f| f < k));
        }

        #[test]
        fn subject_mode_keeps_subjects_atomic(ids in proptest::collection::vec(0u8..6, 3..60)) {
            let subjects: Vec<String> = ids.iter().map(|i| format!("p{i}")).collect();
            if let Ok(plan) = subject_folds(&subjects, 0) {
                for (i, s) in subjects.iter().enumerate() {
                    prop_assert_eq!(&plan.fold_subjects[plan.assignments[i]], s);
                }
            }
        }
    }
}
