//! Numeric kernels shared by the f32 training path and the f64 gradient
//! check: strided 1D convolution, batch norm, ReLU, dense and softmax.

use num_traits::Float;

pub trait Scalar: Float + Default + std::fmt::Debug + Send + Sync + 'static {
    fn c(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    fn c(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn c(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..8 {
            acc[j] = acc[j] + x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`.
pub fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// 1D convolution over `[channels][length]` rows. Output length is
/// `lin / stride`; the input is zero-padded `(k - 1) / 2` on the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub lin: usize,
}

impl Conv {
    pub fn lout(&self) -> usize {
        self.lin / self.stride
    }

    pub fn left_pad(&self) -> usize {
        (self.k - 1) / 2
    }

    fn phase_len(&self) -> usize {
        let padded = (self.lout() - 1) * self.stride + self.k;
        padded.div_ceil(self.stride)
    }

    /// Padded input split by position modulo the stride, so a strided tap
    /// becomes a contiguous slice: `ph[(c*s + p)*plen + m] = xpad[c][p + m*s]`.
    fn phases<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let (s, plen, left) = (self.stride, self.phase_len(), self.left_pad());
        let mut ph = vec![T::zero(); self.cin * s * plen];
        for c in 0..self.cin {
            for (i, &v) in x[c * self.lin..(c + 1) * self.lin].iter().enumerate() {
                let pos = i + left;
                let (p, m) = (pos % s, pos / s);
                if m < plen {
                    ph[(c * s + p) * plen + m] = v;
                }
            }
        }
        ph
    }

    fn tap(&self, c: usize, kk: usize) -> usize {
        (c * self.stride + kk % self.stride) * self.phase_len() + kk / self.stride
    }

    /// `y = conv(x) + bias` for one sample; `w` is `[cout][cin][k]`.
    pub fn forward<T: Scalar>(&self, w: &[T], bias: Option<&[T]>, x: &[T], y: &mut [T]) {
        let lout = self.lout();
        let ph = self.phases(x);
        for o in 0..self.cout {
            let yo = &mut y[o * lout..(o + 1) * lout];
            yo.fill(bias.map_or(T::zero(), |b| b[o]));
            for c in 0..self.cin {
                for kk in 0..self.k {
                    let at = self.tap(c, kk);
                    axpy(yo, w[(o * self.cin + c) * self.k + kk], &ph[at..at + lout]);
                }
            }
        }
    }

    /// Accumulates weight, bias and (optionally) input gradients for one
    /// sample.
    pub fn backward<T: Scalar>(
        &self,
        w: &[T],
        x: &[T],
        dy: &[T],
        dw: &mut [T],
        dbias: Option<&mut [T]>,
        dx: Option<&mut [T]>,
    ) {
        let lout = self.lout();
        let ph = self.phases(x);
        let mut dph = dx.is_some().then(|| vec![T::zero(); ph.len()]);
        for o in 0..self.cout {
            let dyo = &dy[o * lout..(o + 1) * lout];
            for c in 0..self.cin {
                for kk in 0..self.k {
                    let at = self.tap(c, kk);
                    let wi = (o * self.cin + c) * self.k + kk;
                    dw[wi] = dw[wi] + dot(dyo, &ph[at..at + lout]);
                    if let Some(d) = dph.as_mut() {
                        axpy(&mut d[at..at + lout], w[wi], dyo);
                    }
                }
            }
        }
        if let Some(db) = dbias {
            for o in 0..self.cout {
                db[o] = db[o] + dy[o * lout..(o + 1) * lout].iter().fold(T::zero(), |a, &b| a + b);
            }
        }
        if let (Some(dx), Some(dph)) = (dx, dph) {
            let (s, plen, left) = (self.stride, self.phase_len(), self.left_pad());
            for c in 0..self.cin {
                for i in 0..self.lin {
                    let pos = i + left;
                    let (p, m) = (pos % s, pos / s);
                    if m < plen {
                        let d = &mut dx[c * self.lin + i];
                        *d = *d + dph[(c * s + p) * plen + m];
                    }
                }
            }
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel normalized activations of one batch-norm call.
#[derive(Clone, Debug, Default)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Batch-statistics normalization over `[n][c][l]`. Returns the cache and
/// each channel's batch mean and unbiased variance.
pub fn bn_train<T: Scalar>(
    x: &[T],
    (n, c, l): (usize, usize, usize),
    gamma: &[T],
    beta: &[T],
    y: &mut [T],
) -> (BnCache<T>, Vec<f64>, Vec<f64>) {
    let m = (n * l) as f64;
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); c];
    let (mut means, mut vars) = (vec![0.0; c], vec![0.0; c]);
    for ch in 0..c {
        let rows = || (0..n).map(move |i| (i * c + ch) * l);
        let mean = rows().map(|r| x[r..r + l].iter().map(|v| v.f64()).sum::<f64>()).sum::<f64>() / m;
        let var = rows()
            .map(|r| x[r..r + l].iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>())
            .sum::<f64>()
            / m;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[ch] = T::c(is);
        let (g, b, mu, ist) = (gamma[ch], beta[ch], T::c(mean), T::c(is));
        for r in rows() {
            for t in r..r + l {
                let h = (x[t] - mu) * ist;
                xhat[t] = h;
                y[t] = g * h + b;
            }
        }
        means[ch] = mean;
        vars[ch] = if m > 1.0 { var * m / (m - 1.0) } else { var };
    }
    (BnCache { xhat, inv_std }, means, vars)
}

pub fn bn_infer<T: Scalar>(
    x: &[T],
    (n, c, l): (usize, usize, usize),
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    y: &mut [T],
) {
    for ch in 0..c {
        let scale = gamma[ch] / (var[ch] + T::c(BN_EPS)).sqrt();
        let shift = beta[ch] - mean[ch] * scale;
        for i in 0..n {
            let r = (i * c + ch) * l;
            for t in r..r + l {
                y[t] = x[t] * scale + shift;
            }
        }
    }
}

/// Gradients of [`bn_train`]; `dx` is overwritten.
pub fn bn_backward<T: Scalar>(
    dy: &[T],
    cache: &BnCache<T>,
    (n, c, l): (usize, usize, usize),
    gamma: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    dx: &mut [T],
) {
    let m = T::c((n * l) as f64);
    for ch in 0..c {
        let rows = || (0..n).map(move |i| (i * c + ch) * l);
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for r in rows() {
            for t in r..r + l {
                sum_dy = sum_dy + dy[t];
                sum_dy_xhat = sum_dy_xhat + dy[t] * cache.xhat[t];
            }
        }
        dgamma[ch] = dgamma[ch] + sum_dy_xhat;
        dbeta[ch] = dbeta[ch] + sum_dy;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        for r in rows() {
            for t in r..r + l {
                dx[t] = k * (m * dy[t] - sum_dy - cache.xhat[t] * sum_dy_xhat);
            }
        }
    }
}

pub fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the forward output was not positive.
pub fn relu_mask<T: Scalar>(dy: &mut [T], out: &[T]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Max-shifted softmax; the largest logit maps to `exp(0)` so nothing overflows.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = e.iter().fold(T::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / sum).collect()
}

pub fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + logits.iter().map(|&z| (z - max).exp()).fold(T::zero(), |a, b| a + b).ln()
}
