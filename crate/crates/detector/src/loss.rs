//! Class-weighted cross-entropy.

use crate::arch::{Architecture, Layout};
use crate::error::{DetectorError, Result};
use crate::network::Net;
use crate::ops::{log_sum_exp, softmax, Scalar};

/// Inverse-frequency class weights `N / (classes * N_c)`; absent classes get 0.
pub fn class_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (classes as f64 * c as f64) })
        .collect()
}

/// Weighted mean cross-entropy `Σ w_y ce / Σ w_y` and its gradient with
/// respect to the logits.
pub fn weighted_cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], weights: &[f64], classes: usize) -> (f64, Vec<T>) {
    let wsum: f64 = labels.iter().map(|&y| weights[y]).sum();
    let mut dlogits = vec![T::zero(); logits.len()];
    if wsum <= 0.0 {
        return (0.0, dlogits);
    }
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = &logits[i * classes..(i + 1) * classes];
        let w = weights[y] / wsum;
        loss += w * (log_sum_exp(z) - z[y]).f64();
        for (j, p) in softmax(z).into_iter().enumerate() {
            let t = if j == y { T::one() } else { T::zero() };
            dlogits[i * classes + j] = T::c(w) * (p - t);
        }
    }
    (loss, dlogits)
}

/// Training-mode loss and parameter gradients for one batch of `labels.len()`
/// inputs laid out back to back. Batch statistics are blended into `running`
/// when given.
pub fn loss_and_gradients<T: Scalar>(
    arch: &Architecture,
    layout: &Layout,
    params: &[T],
    running: Option<&mut [T]>,
    inputs: &[T],
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Vec<T>)> {
    let n = labels.len();
    if n == 0 || inputs.len() != n * arch.input_len {
        return Err(DetectorError::Shape(format!(
            "batch of {n} labels needs {} input samples, got {}",
            n * arch.input_len,
            inputs.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= arch.classes) {
        return Err(DetectorError::Shape(format!("label {y} outside {} classes", arch.classes)));
    }
    let net = Net { arch, layout, params };
    let (logits, cache) = net.forward_train(running, inputs, n);
    let (loss, dlogits) = weighted_cross_entropy(&logits, labels, weights, arch.classes);
    if !loss.is_finite() {
        return Err(DetectorError::Diverged(format!("loss is {loss}")));
    }
    Ok((loss, net.backward(&cache, &dlogits)))
}
