//! Trained-model container, inference and the binary model file.

use std::io::Write;
use std::path::Path;

use afsense_core::purification::PulseSegment;
use afsense_core::Rhythm;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch::{Architecture, Layout};
use crate::error::{DetectorError, Result};
use crate::network::Net;
use crate::ops::{softmax, BN_EPS, BN_MOMENTUM};
use crate::train::{TrainConfig, TrainHistory};

pub const MAGIC: &[u8; 4] = b"AFRN";
pub const FORMAT_VERSION: u32 = 1;
/// Output order of the two classes.
pub const CLASS_ORDER: [Rhythm; 2] = [Rhythm::Nsr, Rhythm::Af];
const INFER_BATCH: usize = 16;

pub fn class_index(r: Rhythm) -> usize {
    match r {
        Rhythm::Nsr => 0,
        Rhythm::Af => 1,
    }
}

/// Standardizes to zero mean and unit population standard deviation.
pub fn zscore(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(DetectorError::Degenerate("empty segment".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var.is_finite() && var > 0.0) {
        return Err(DetectorError::Degenerate(format!("segment variance is {var}")));
    }
    let sd = var.sqrt();
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub class_order: Vec<Rhythm>,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub init: String,
    pub padding: String,
    pub init_seed: u64,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub history: Option<TrainHistory>,
    /// Free-form provenance supplied by the caller.
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl ModelMetadata {
    fn new(init_seed: u64) -> Self {
        Self {
            class_order: CLASS_ORDER.to_vec(),
            bn_eps: BN_EPS,
            bn_momentum: BN_MOMENTUM,
            init: "conv: uniform(±sqrt(6/fan_in)); dense: uniform(±1/sqrt(fan_in)); biases 0; bn gamma 1, beta 0".into(),
            padding: "left (k-1)/2, right remainder".into(),
            init_seed,
            train_config: None,
            history: None,
            extra: serde_json::Value::Null,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: Rhythm,
    pub prob_af: f64,
    /// Probabilities in [`CLASS_ORDER`].
    pub probabilities: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Detected(Detection),
    Abstain { reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorModel {
    pub arch: Architecture,
    pub layout: Layout,
    pub params: Vec<f32>,
    /// Batch-norm running means and variances.
    pub running: Vec<f32>,
    pub metadata: ModelMetadata,
}

impl DetectorModel {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, running) = layout.init(&arch, &mut rng);
        Ok(Self {
            arch,
            layout,
            params,
            running,
            metadata: ModelMetadata::new(seed),
        })
    }

    fn net(&self) -> Net<'_, f32> {
        Net {
            arch: &self.arch,
            layout: &self.layout,
            params: &self.params,
        }
    }

    /// Inference-mode logits for already-normalized inputs, plus the
    /// `(channels, length)` after the input stage and each block.
    pub fn logits(&self, inputs: &[Vec<f32>]) -> Result<(Vec<[f32; 2]>, Vec<(usize, usize)>)> {
        if self.arch.classes != 2 {
            return Err(DetectorError::Config("inference expects two classes".into()));
        }
        let mut out = Vec::with_capacity(inputs.len());
        let mut shapes = Vec::new();
        for chunk in inputs.chunks(INFER_BATCH) {
            let mut x = Vec::with_capacity(chunk.len() * self.arch.input_len);
            for s in chunk {
                if s.len() != self.arch.input_len {
                    return Err(DetectorError::Shape(format!(
                        "input holds {} samples, model expects {}",
                        s.len(),
                        self.arch.input_len
                    )));
                }
                x.extend_from_slice(s);
            }
            let (z, sh) = self.net().forward_infer(&self.running, &x, chunk.len());
            out.extend(z.chunks_exact(2).map(|p| [p[0], p[1]]));
            shapes = sh;
        }
        Ok((out, shapes))
    }

    /// Class probabilities for already-normalized inputs.
    pub fn probabilities(&self, inputs: &[Vec<f32>]) -> Result<Vec<[f64; 2]>> {
        let (logits, _) = self.logits(inputs)?;
        Ok(logits
            .iter()
            .map(|z| {
                let p = softmax(&[z[0] as f64, z[1] as f64]);
                [p[0], p[1]]
            })
            .collect())
    }

    /// Z-scores then classifies raw pulse samples.
    pub fn predict(&self, samples: &[f64]) -> Result<Detection> {
        Ok(self.predict_batch(&[samples])?.remove(0))
    }

    pub fn predict_batch(&self, segments: &[&[f64]]) -> Result<Vec<Detection>> {
        let inputs = segments
            .iter()
            .map(|s| Ok(zscore(s)?.into_iter().map(|v| v as f32).collect()))
            .collect::<Result<Vec<Vec<f32>>>>()?;
        Ok(self.probabilities(&inputs)?.into_iter().map(Detection::from_probabilities).collect())
    }

    /// Abstains when the segment's upstream quality gate failed and was not
    /// overridden.
    pub fn predict_segment(&self, seg: &PulseSegment) -> Result<Verdict> {
        if let Some(q) = &seg.provenance.quality {
            if !q.pass && !seg.provenance.forced {
                return Ok(Verdict::Abstain {
                    reason: q.reason.clone().unwrap_or_else(|| "quality gate failed".into()),
                });
            }
        }
        Ok(Verdict::Detected(self.predict(&seg.samples)?))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let a = &self.arch;
        for v in [a.input_len, a.channels, a.kernel, a.classes, a.strides.len()] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &s in &a.strides {
            b.extend_from_slice(&(s as u32).to_le_bytes());
        }
        let meta = serde_json::to_vec(&self.metadata)?;
        b.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        b.extend_from_slice(&meta);
        for block in [&self.params, &self.running] {
            b.extend_from_slice(&(block.len() as u64).to_le_bytes());
            for v in block.iter() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(DetectorError::Corrupt("missing AFRN magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(DetectorError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 32 + 8 {
            return Err(DetectorError::Corrupt("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(DetectorError::Corrupt("checksum mismatch (truncated or modified)".into()));
        }
        let mut r = Reader { b: body, at: 8 };
        let (input_len, channels, kernel, classes) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n_strides = r.u32()? as usize;
        if n_strides > 64 {
            return Err(DetectorError::Corrupt(format!("{n_strides} blocks")));
        }
        let strides = (0..n_strides).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let arch = Architecture {
            input_len,
            channels,
            kernel,
            strides,
            classes,
        };
        arch.validate().map_err(|e| DetectorError::Corrupt(e.to_string()))?;
        let meta_len = r.u32()? as usize;
        let metadata: ModelMetadata = serde_json::from_slice(r.take(meta_len)?)?;
        let params = r.f32s()?;
        let running = r.f32s()?;
        if r.at != body.len() {
            return Err(DetectorError::Corrupt("trailing bytes".into()));
        }
        let layout = Layout::new(&arch);
        if params.len() != layout.n_params || running.len() != layout.n_running {
            return Err(DetectorError::Corrupt(format!(
                "{} parameters and {} running statistics do not fit the architecture ({} / {})",
                params.len(),
                running.len(),
                layout.n_params,
                layout.n_running
            )));
        }
        Ok(Self {
            arch,
            layout,
            params,
            running,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl Detection {
    /// Argmax over probabilities in [`CLASS_ORDER`]; ties go to non-AF.
    pub fn from_probabilities(p: [f64; 2]) -> Self {
        let af = class_index(Rhythm::Af);
        Self {
            label: if p[af] > p[1 - af] { Rhythm::Af } else { Rhythm::Nsr },
            prob_af: p[af],
            probabilities: p,
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| DetectorError::Corrupt(format!("unexpected end of file at byte {}", self.at)))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        let n = usize::try_from(n).map_err(|_| DetectorError::Corrupt("tensor too large".into()))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| DetectorError::Corrupt("tensor too large".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}
