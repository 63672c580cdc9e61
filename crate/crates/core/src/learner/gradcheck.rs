//! Finite-difference check of the hand-written backward pass.
//!
//! Runs in `f64` on a copy of the model: the analytic gradient of the
//! single-sample cross-entropy is compared with central differences
//! `(L(θ + h) − L(θ − h)) / 2h` with `h = STEP`.

use super::net::{self, Scratch, Trace};
use super::Classifier;
use crate::rng::DetRng;
use crate::tensor::ImageTensor;

// Small enough that the central difference rarely straddles a ReLU or
// max-pool kink; f64 keeps the rounding error far below the tolerance.
pub const STEP: f64 = 1e-6;

/// Differences below this magnitude count as agreement. Gradients that small
/// sit at the floating-point noise floor of the difference quotient.
const ABS_FLOOR: f64 = 1e-7;

fn sample_loss(arch: &net::Arch, params: &[f64], x: &[f64], label: usize, trace: &mut Trace<f64>) -> f64 {
    net::forward(arch, params, x, trace);
    net::loss(&trace.probs, label)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < ABS_FLOOR {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Analytic `∂L/∂θ` for one sample, in `f64`.
pub fn analytic_gradient(model: &Classifier, image: &ImageTensor, label: usize) -> Vec<f64> {
    let arch = model.arch();
    let params: Vec<f64> = model.params().iter().map(|&p| f64::from(p)).collect();
    let x: Vec<f64> = image.data().iter().map(|&p| f64::from(p)).collect();
    let mut trace = Trace::default();
    net::forward(&arch, &params, &x, &mut trace);
    let mut grad = vec![0.0; params.len()];
    net::backward(&arch, &params, &trace, label, 1.0, false, &mut grad, &mut Scratch::default());
    grad
}

fn check(model: &Classifier, image: &ImageTensor, label: usize, which: &[usize]) -> f64 {
    let arch = model.arch();
    let mut params: Vec<f64> = model.params().iter().map(|&p| f64::from(p)).collect();
    let x: Vec<f64> = image.data().iter().map(|&p| f64::from(p)).collect();
    let grad = analytic_gradient(model, image, label);
    let mut trace = Trace::default();
    let mut worst = 0f64;
    for &i in which {
        let orig = params[i];
        params[i] = orig + STEP;
        let up = sample_loss(&arch, &params, &x, label, &mut trace);
        params[i] = orig - STEP;
        let down = sample_loss(&arch, &params, &x, label, &mut trace);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}

/// Maximum relative error over every parameter.
pub fn grad_check(model: &Classifier, image: &ImageTensor, label: usize) -> f64 {
    let all: Vec<usize> = (0..model.params().len()).collect();
    check(model, image, label, &all)
}

/// Same as [`grad_check`] over `count` parameters drawn from every layer.
pub fn grad_check_sampled(
    model: &Classifier,
    image: &ImageTensor,
    label: usize,
    count: usize,
    seed: u64,
) -> f64 {
    let mut rng = DetRng::new(seed);
    let n = model.params().len();
    let l = model.arch().layout();
    let ranges = [l.conv1_w, l.conv1_b, l.conv2_w, l.conv2_b, l.fc1_w, l.fc1_b, l.fc2_w, l.fc2_b];
    let which: Vec<usize> = (0..count.min(n))
        .map(|i| {
            let r = &ranges[i % ranges.len()];
            r.start + rng.index(r.len())
        })
        .collect();
    check(model, image, label, &which)
}
