//! Mini-batch Adam training with early stopping on validation F1.

use afsense_core::evaluation::{metrics, ConfusionMatrix};
use afsense_core::Rhythm;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DetectorError, Result};
use crate::loss::{class_weights, loss_and_gradients, weighted_cross_entropy};
use crate::model::{class_index, zscore, DetectorModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// Epochs without a validation-F1 improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight the loss by inverse class frequency.
    pub class_weighted: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 50,
            patience: 10,
            batch_size: 16,
            seed: 0,
            class_weighted: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DetectorError::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }
}

/// Z-scored inputs with labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f32>>,
    pub labels: Vec<Rhythm>,
}

impl Dataset {
    pub fn from_segments<'a>(segments: impl IntoIterator<Item = (&'a [f64], Rhythm)>) -> Result<Self> {
        let mut d = Dataset::default();
        for (s, y) in segments {
            d.inputs.push(zscore(s)?.into_iter().map(|v| v as f32).collect());
            d.labels.push(y);
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// `None` when precision and recall are both undefined.
    pub val_f1: Option<f64>,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, cfg: &TrainConfig, params: &mut [f32], grad: &[f32]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
            let g = g as f64;
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let upd = cfg.learning_rate * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + cfg.adam_eps);
            *p = (*p as f64 - upd) as f32;
        }
    }
}

/// Mean loss (unweighted), F1 and accuracy in inference mode.
fn evaluate(model: &DetectorModel, data: &Dataset) -> Result<(f64, Option<f64>, f64)> {
    let (logits, _) = model.logits(&data.inputs)?;
    let flat: Vec<f64> = logits.iter().flat_map(|z| [z[0] as f64, z[1] as f64]).collect();
    let labels: Vec<usize> = data.labels.iter().map(|&r| class_index(r)).collect();
    let (loss, _) = weighted_cross_entropy(&flat, &labels, &[1.0, 1.0], 2);
    let cm = ConfusionMatrix::from_pairs(logits.iter().zip(&data.labels).map(|(z, &y)| {
        let pred = if z[class_index(Rhythm::Af)] > z[class_index(Rhythm::Nsr)] {
            Rhythm::Af
        } else {
            Rhythm::Nsr
        };
        (pred, y)
    }));
    let m = metrics(&cm);
    Ok((loss, m.f1, m.accuracy.unwrap_or(0.0)))
}

/// Trains in place and leaves the parameters of the best validation-F1
/// epoch (earliest on ties) in `model`.
pub fn train(model: &mut DetectorModel, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(DetectorError::Config(format!(
            "training needs non-empty splits (train {}, validation {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let arch = model.arch.clone();
    let labels: Vec<usize> = train_set.labels.iter().map(|&r| class_index(r)).collect();
    let weights = if cfg.class_weighted {
        class_weights(&labels, arch.classes)
    } else {
        vec![1.0; arch.classes]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam {
        m: vec![0.0; model.params.len()],
        v: vec![0.0; model.params.len()],
        t: 0,
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory {
        best_val_f1: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut best = (model.params.clone(), model.running.clone());
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * arch.input_len);
            for &i in batch {
                x.extend_from_slice(&train_set.inputs[i]);
            }
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grad) =
                loss_and_gradients(&arch, &model.layout, &model.params, Some(&mut model.running), &x, &y, &weights)?;
            adam.step(cfg, &mut model.params, &grad);
            if model.params.iter().any(|p| !p.is_finite()) {
                return Err(DetectorError::Diverged(format!("non-finite parameter in epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
        }
        let (val_loss, val_f1, val_accuracy) = evaluate(model, val_set)?;
        let rec = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss,
            val_f1,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val F1 {}, val acc {:.3}",
            rec.train_loss,
            rec.val_loss,
            val_f1.map_or("undefined".into(), |f| format!("{f:.3}")),
            val_accuracy
        );
        history.epochs.push(rec);
        let score = val_f1.unwrap_or(0.0);
        if score > history.best_val_f1 {
            history.best_val_f1 = score;
            history.best_epoch = epoch;
            best = (model.params.clone(), model.running.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    (model.params, model.running) = best;
    model.metadata.train_config = Some(cfg.clone());
    model.metadata.history = Some(history.clone());
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Architecture;

    fn tiny() -> Architecture {
        Architecture {
            input_len: 64,
            channels: 2,
            kernel: 3,
            strides: vec![1, 4, 1, 4, 1, 4],
            classes: 2,
        }
    }

    /// Smooth sinusoid (NSR) versus jagged random-phase bursts (AF).
    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segs: Vec<(Vec<f64>, Rhythm)> = (0..n)
            .map(|k| {
                let af = k % 2 == 0;
                let x = (0..64)
                    .map(|t| {
                        let t = t as f64;
                        if af {
                            rand::Rng::random_range(&mut rng, -1.0..1.0)
                        } else {
                            (t * 0.4).sin() + 0.05 * rand::Rng::random_range(&mut rng, -1.0..1.0)
                        }
                    })
                    .collect();
                (x, if af { Rhythm::Af } else { Rhythm::Nsr })
            })
            .collect();
        Dataset::from_segments(segs.iter().map(|(x, y)| (x.as_slice(), *y))).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut m = DetectorModel::new(tiny(), 1).unwrap();
        let before = m.params.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 1,
            ..Default::default()
        };
        train(&mut m, &toy(20, 1), &toy(6, 2), &cfg).unwrap();
        assert_eq!(m.params, before);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 15,
            seed: 4,
            ..Default::default()
        };
        let run = || {
            let mut m = DetectorModel::new(tiny(), 7).unwrap();
            let h = train(&mut m, &toy(64, 3), &toy(20, 4), &cfg).unwrap();
            (m, h)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1.params, m2.params);
        assert!(h1.best_val_f1 >= 0.9, "best F1 {}", h1.best_val_f1);
        assert_eq!(h1.epochs[h1.best_epoch - 1].val_f1, Some(h1.best_val_f1));
    }

    #[test]
    fn empty_split_is_a_config_error() {
        let mut m = DetectorModel::new(tiny(), 1).unwrap();
        let r = train(&mut m, &toy(4, 1), &Dataset::default(), &TrainConfig::default());
        assert!(matches!(r, Err(DetectorError::Config(_))));
        let bad = TrainConfig {
            max_epochs: 0,
            ..Default::default()
        };
        assert!(matches!(train(&mut m, &toy(4, 1), &toy(4, 2), &bad), Err(DetectorError::Config(_))));
    }
}
