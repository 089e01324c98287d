//! Finite-difference gradient checking.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Step used by the directional checks.
pub const FD_STEP: f64 = 1e-3;

/// Relative error between the analytic directional derivative `<grad, v>`
/// and the central difference of `f` along a random unit direction `v`.
pub fn directional_error<R: Rng>(
    rng: &mut R,
    x: &[f64],
    grad: &[f64],
    f: impl Fn(&[f64]) -> f64,
) -> f64 {
    assert_eq!(x.len(), grad.len());
    let mut v: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= norm);
    let shifted = |sign: f64| -> Vec<f64> {
        x.iter().zip(&v).map(|(a, d)| a + sign * FD_STEP * d).collect()
    };
    let fd = (f(&shifted(1.0)) - f(&shifted(-1.0))) / (2.0 * FD_STEP);
    let an: f64 = grad.iter().zip(&v).map(|(g, d)| g * d).sum();
    relative_error(an, fd)
}

/// Per-coordinate central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let a = f(&buf);
            buf[i] = x[i] - h;
            let b = f(&buf);
            buf[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-300 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// `||a - b|| / max(||a||, ||b||)` for vectors.
pub fn vector_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}
