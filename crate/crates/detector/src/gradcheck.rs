//! Finite-difference verification of the hand-written backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{Architecture, Layout};
use crate::error::Result;
use crate::loss::{class_weights, loss_and_gradients};
use crate::network::Net;

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub const ERROR_FLOOR: f64 = 1e-6;
const MIN_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub worst_error: f64,
    pub worst_at: String,
    /// Parameters whose ±eps interval flipped a rectifier and were
    /// re-checked with a smaller step.
    pub kink_fallbacks: usize,
}

/// Checks every parameter of `arch` against central differences on a
/// random batch in training mode. Starting parameters are the seeded init
/// plus a small perturbation so biases and BN affine terms are non-trivial.
pub fn gradient_check(arch: &Architecture, seed: u64, eps: f64, batch: usize) -> Result<GradCheckReport> {
    arch.validate()?;
    let layout = Layout::new(arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (init, _) = layout.init(arch, &mut rng);
    let mut params: Vec<f64> = init.iter().map(|&v| v as f64 + rng.random_range(-0.1..0.1)).collect();
    let x: Vec<f64> = (0..batch * arch.input_len).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..batch).map(|i| if i == 0 { 0 } else { rng.random_range(0..arch.classes) }).collect();
    let weights = class_weights(&labels, arch.classes);

    let loss = |p: &[f64]| loss_and_gradients(arch, &layout, p, None, &x, &labels, &weights);
    let pattern = |p: &[f64]| {
        let net = Net { arch, layout: &layout, params: p };
        net.forward_train(None, &x, batch).1.relu_pattern()
    };
    let (_, grad) = loss(&params)?;
    let mut report = GradCheckReport {
        n_params: params.len(),
        worst_error: 0.0,
        worst_at: String::new(),
        kink_fallbacks: 0,
    };
    for (name, range) in &layout.tensors {
        for k in range.clone() {
            let orig = params[k];
            let mut h = eps;
            let numeric = loop {
                params[k] = orig + h;
                let (lp, pp) = (loss(&params)?.0, pattern(&params));
                params[k] = orig - h;
                let (lm, pm) = (loss(&params)?.0, pattern(&params));
                params[k] = orig;
                if pp == pm || h < MIN_EPS {
                    break (lp - lm) / (2.0 * h);
                }
                if h == eps {
                    report.kink_fallbacks += 1;
                }
                h /= 2.0;
            };
            let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(ERROR_FLOOR);
            if rel > report.worst_error {
                report.worst_error = rel;
                report.worst_at = format!(
                    "{name}[{}] analytic {:.6e} numeric {numeric:.6e} step {h:e}",
                    k - range.start,
                    grad[k]
                );
            }
        }
    }
    Ok(report)
}
