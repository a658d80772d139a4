//! Network architecture and the flat parameter layout.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DetectorError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub input_len: usize,
    pub channels: usize,
    pub kernel: usize,
    /// One entry per residual block.
    pub strides: Vec<usize>,
    pub classes: usize,
}

impl Default for Architecture {
    /// Input conv then six residual blocks with kernel 32 and 16 channels,
    /// downsampling by 4 every second block.
    fn default() -> Self {
        Self {
            input_len: 3840,
            channels: 16,
            kernel: 32,
            strides: vec![1, 4, 1, 4, 1, 4],
            classes: 2,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        let down: usize = self.strides.iter().product();
        if self.input_len == 0 || self.channels == 0 || self.kernel == 0 || self.classes < 2 {
            return Err(DetectorError::Config(format!("degenerate architecture {self:?}")));
        }
        if self.strides.contains(&0) || self.input_len % down != 0 {
            return Err(DetectorError::Config(format!(
                "input length {} is not divisible by the total stride {down}",
                self.input_len
            )));
        }
        Ok(())
    }

    /// Temporal length after the input conv and after each block.
    pub fn temporal_lengths(&self) -> Vec<usize> {
        let mut l = self.input_len;
        let mut out = vec![l];
        for &s in &self.strides {
            l /= s;
            out.push(l);
        }
        out
    }

    pub fn feature_len(&self) -> usize {
        self.channels * self.temporal_lengths().last().copied().unwrap_or(0)
    }
}

/// Offsets of one batch-norm layer's parameters and running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnLayout {
    pub gamma: usize,
    pub beta: usize,
    /// Running mean at `running`, running variance at `running + channels`.
    pub running: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub stride: usize,
    pub conv1: usize,
    pub bn1: BnLayout,
    pub conv2: usize,
    pub bn2: BnLayout,
    /// Kernel-1 projection weight and bias when the block downsamples.
    pub shortcut: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub input_conv: usize,
    pub input_bn: BnLayout,
    pub blocks: Vec<BlockLayout>,
    pub head_bn: BnLayout,
    pub dense_w: usize,
    pub dense_b: usize,
    pub n_params: usize,
    pub n_running: usize,
    /// Named parameter tensors in declared order.
    pub tensors: Vec<(String, Range<usize>)>,
}

struct Builder {
    n: usize,
    running: usize,
    tensors: Vec<(String, Range<usize>)>,
}

impl Builder {
    fn take(&mut self, name: String, len: usize) -> usize {
        let at = self.n;
        self.n += len;
        self.tensors.push((name, at..self.n));
        at
    }

    fn bn(&mut self, name: &str, c: usize) -> BnLayout {
        let gamma = self.take(format!("{name}.gamma"), c);
        let beta = self.take(format!("{name}.beta"), c);
        let running = self.running;
        self.running += 2 * c;
        BnLayout { gamma, beta, running }
    }
}

impl Layout {
    pub fn new(arch: &Architecture) -> Self {
        let (c, k) = (arch.channels, arch.kernel);
        let mut b = Builder {
            n: 0,
            running: 0,
            tensors: Vec::new(),
        };
        let input_conv = b.take("input_conv.weight".into(), c * k);
        let input_bn = b.bn("input_bn", c);
        let mut blocks = Vec::new();
        for (i, &stride) in arch.strides.iter().enumerate() {
            let p = format!("block{}", i + 1);
            let conv1 = b.take(format!("{p}.conv1.weight"), c * c * k);
            let bn1 = b.bn(&format!("{p}.bn1"), c);
            let conv2 = b.take(format!("{p}.conv2.weight"), c * c * k);
            let bn2 = b.bn(&format!("{p}.bn2"), c);
            let shortcut = (stride != 1).then(|| {
                let w = b.take(format!("{p}.shortcut.weight"), c * c);
                let bias = b.take(format!("{p}.shortcut.bias"), c);
                (w, bias)
            });
            blocks.push(BlockLayout {
                stride,
                conv1,
                bn1,
                conv2,
                bn2,
                shortcut,
            });
        }
        let head_bn = b.bn("head_bn", c);
        let dense_w = b.take("dense.weight".into(), arch.classes * arch.feature_len());
        let dense_b = b.take("dense.bias".into(), arch.classes);
        Self {
            input_conv,
            input_bn,
            blocks,
            head_bn,
            dense_w,
            dense_b,
            n_params: b.n,
            n_running: b.running,
            tensors: b.tensors,
        }
    }

    /// Fan-in scaled uniform weights, zero biases, unit BN scales, and
    /// running statistics at mean 0, variance 1.
    pub fn init(&self, arch: &Architecture, rng: &mut impl Rng) -> (Vec<f32>, Vec<f32>) {
        let mut params = vec![0.0f32; self.n_params];
        let (c, k) = (arch.channels, arch.kernel);
        let mut fill = |at: usize, len: usize, bound: f64| {
            for v in &mut params[at..at + len] {
                *v = rng.random_range(-bound..bound) as f32;
            }
        };
        fill(self.input_conv, c * k, (6.0 / k as f64).sqrt());
        for bl in &self.blocks {
            fill(bl.conv1, c * c * k, (6.0 / (c * k) as f64).sqrt());
            fill(bl.conv2, c * c * k, (6.0 / (c * k) as f64).sqrt());
            if let Some((w, _)) = bl.shortcut {
                fill(w, c * c, (6.0 / c as f64).sqrt());
            }
        }
        let f = arch.feature_len();
        fill(self.dense_w, arch.classes * f, 1.0 / (f as f64).sqrt());
        let mut running = vec![0.0f32; self.n_running];
        for bn in self.batch_norms() {
            params[bn.gamma..bn.gamma + c].fill(1.0);
            running[bn.running + c..bn.running + 2 * c].fill(1.0);
        }
        (params, running)
    }

    pub fn batch_norms(&self) -> Vec<BnLayout> {
        let mut v = vec![self.input_bn];
        for b in &self.blocks {
            v.push(b.bn1);
            v.push(b.bn2);
        }
        v.push(self.head_bn);
        v
    }
}
