//! Resolved pipeline configuration: defaults, then the `--config` file,
//! then command-line flags.

use std::path::Path;

use afsense_core::probe::ProbeConfig;
use afsense_core::purification::PurificationParams;
use afsense_core::quality::QualityThresholds;
use afsense_core::synth::line_of;
use afsense_detector::{Architecture, TrainConfig};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Share of each training split held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { validation_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every other seed is derived from it.
    pub seed: u64,
    pub probe: ProbeConfig,
    pub quality: QualityThresholds,
    pub purification: PurificationParams,
    pub detector: Architecture,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            anyhow::anyhow!("config line {line}: {}", e.message())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.probe.validate()?;
        self.purification.validate()?;
        self.detector.validate()?;
        self.training.validate()?;
        let f = self.evaluation.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            bail!("evaluation.validation_fraction must lie in (0, 1), got {f}");
        }
        for (name, v) in [("stability", self.quality.stability), ("cardiac", self.quality.cardiac)] {
            if !v.is_finite() {
                bail!("quality.{name} must be finite");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_constants() {
        let c = PipelineConfig::default();
        assert_eq!((c.quality.stability, c.quality.cardiac), (0.90, 0.70));
        assert_eq!(c.purification.window_seconds, 2.5);
        assert_eq!(c.purification.hop_seconds, 0.5);
        assert_eq!(c.purification.eta, 5.0);
        assert!((c.purification.gate_angle - std::f64::consts::FRAC_PI_6).abs() < 1e-15);
        assert_eq!(c.training.learning_rate, 1e-3);
        assert_eq!(c.training.max_epochs, 50);
        assert_eq!(c.detector.kernel, 32);
        assert_eq!(c.detector.channels, 16);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = PipelineConfig::from_toml("seed = 5\n[training]\nmax_epochs = 3\n[detector]\nchannels = 4\n").unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.training.max_epochs, 3);
        assert_eq!(c.training.batch_size, 16);
        assert_eq!(c.detector.channels, 4);
        assert_eq!(c.detector.kernel, 32);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = PipelineConfig::from_toml("seed = 1\n\nbogus = 2\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
