//! JSON envelope shared by every output artifact.

use std::path::Path;

use afsense_core::io::{read_json, sha256_file, write_json};
use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    /// Path relative to the input it was listed in, or the file name.
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path, name: impl Into<String>) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            sha256: sha256_file(path).with_context(|| format!("hashing {}", path.display()))?,
        })
    }

    /// Digest named by the file name alone, so artifacts do not depend on
    /// where the inputs live.
    pub fn of_file(path: &Path) -> Result<Self> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Self::of(path, name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: PipelineConfig,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(command: &str, config: &PipelineConfig, inputs: Vec<InputDigest>) -> Self {
        Self {
            tool: "afsense".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
            inputs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub kind: String,
    pub provenance: Provenance,
    pub data: T,
}

pub mod kind {
    pub const TRUTH: &str = "ground_truth";
    pub const RECORD: &str = "multichannel_record";
    pub const QUALITY: &str = "quality_report";
    pub const SEGMENT: &str = "pulse_segment";
    pub const QUALITY_FAILURE: &str = "quality_failure";
    pub const VERDICT: &str = "verdict";
    pub const EVALUATION: &str = "evaluation";
}

#[derive(Deserialize)]
struct KindOnly {
    kind: String,
}

/// The `kind` tag of an artifact file.
pub fn peek_kind(path: &Path) -> Result<String> {
    let k: KindOnly = read_json(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(k.kind)
}

pub fn read_artifact<T: DeserializeOwned>(path: &Path, expected: &str) -> Result<Artifact<T>> {
    let kind = peek_kind(path)?;
    if kind != expected {
        bail!("{} holds a {kind} artifact, expected {expected}", path.display());
    }
    read_json(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes to `out`, or pretty-prints to stdout when `out` is `None`.
pub fn emit<T: Serialize>(out: Option<&Path>, artifact: &Artifact<T>) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            write_json(p, artifact).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{}", afsense_core::io::to_json_string(artifact)?);
            Ok(())
        }
    }
}
