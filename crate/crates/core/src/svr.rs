//! Epsilon-insensitive support-vector regression solved by sequential minimal
//! optimization with second-order working-set selection, plus the
//! train-only standardization used in front of it.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Kernel {
    Linear,
    /// `exp(-gamma * |a - b|^2)`; `None` uses `1 / n_features`.
    Rbf { gamma: Option<f64> },
}

impl Kernel {
    fn resolve(self, dim: usize) -> ResolvedKernel {
        match self {
            Kernel::Linear => ResolvedKernel::Linear,
            Kernel::Rbf { gamma } => ResolvedKernel::Rbf(gamma.unwrap_or(1.0 / dim.max(1) as f64)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "gamma")]
pub enum ResolvedKernel {
    Linear,
    Rbf(f64),
}

impl ResolvedKernel {
    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match *self {
            ResolvedKernel::Linear => a.dot(&b),
            ResolvedKernel::Rbf(g) => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-g * d2).exp()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrConfig {
    pub kernel: Kernel,
    pub c: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            kernel: Kernel::Rbf { gamma: None },
            c: 10.0,
            epsilon: 0.1,
            tolerance: 1e-3,
            max_iterations: 1_000_000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("svr C must be positive, got {}", self.c)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("svr epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("svr tolerance must be positive".into()));
        }
        if let Kernel::Rbf { gamma: Some(g) } = self.kernel {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("rbf gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Svr {
    pub kernel: ResolvedKernel,
    pub support: Array2<f64>,
    /// `alpha_i - alpha*_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

const TAU: f64 = 1e-12;

impl Svr {
    pub fn fit(x: &Array2<f64>, y: &[f64], config: &SvrConfig) -> Result<Self> {
        config.validate()?;
        let n = x.nrows();
        if n != y.len() {
            return Err(Error::ShapeMismatch(format!("{n} samples but {} targets", y.len())));
        }
        if n < 2 {
            return Err(Error::InvalidInput(format!("svr needs at least 2 samples, got {n}")));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite svr training data".into()));
        }
        let kernel = config.kernel.resolve(x.ncols());
        let k = Array2::from_shape_fn((n, n), |(i, j)| kernel.eval(x.row(i), x.row(j)));
        let c = config.c;
        let m = 2 * n;
        let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
        let q = |a: usize, b: usize| sign(a) * sign(b) * k[[a % n, b % n]];
        let mut alpha = vec![0.0; m];
        let mut grad: Vec<f64> = (0..m)
            .map(|t| if t < n { config.epsilon - y[t] } else { config.epsilon + y[t - n] })
            .collect();

        let in_up = |t: usize, a: f64| if t < n { a < c } else { a > 0.0 };
        let in_low = |t: usize, a: f64| if t < n { a > 0.0 } else { a < c };

        let mut iterations = 0;
        while iterations < config.max_iterations {
            let mut gmax = f64::NEG_INFINITY;
            let mut i = usize::MAX;
            for t in 0..m {
                if in_up(t, alpha[t]) {
                    let v = -sign(t) * grad[t];
                    if v > gmax {
                        gmax = v;
                        i = t;
                    }
                }
            }
            let mut gmin = f64::INFINITY;
            let mut j = usize::MAX;
            let mut best = f64::INFINITY;
            for t in 0..m {
                if !in_low(t, alpha[t]) {
                    continue;
                }
                let v = -sign(t) * grad[t];
                gmin = gmin.min(v);
                if i != usize::MAX && v < gmax {
                    let b = gmax - v;
                    let mut a = q(i, i) + q(t, t) - 2.0 * sign(i) * sign(t) * q(i, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        j = t;
                    }
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax - gmin < config.tolerance {
                break;
            }
            iterations += 1;

            let (old_i, old_j) = (alpha[i], alpha[j]);
            let (qii, qjj, qij) = (q(i, i), q(j, j), q(i, j));
            if sign(i) != sign(j) {
                let quad = (qii + qjj + 2.0 * qij).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let quad = (qii + qjj - 2.0 * qij).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for (t, g) in grad.iter_mut().enumerate() {
                *g += q(t, i) * di + q(t, j) * dj;
            }
        }

        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free_sum, mut free_n) = (0.0, 0usize);
        for t in 0..m {
            let yg = sign(t) * grad[t];
            let positive = t < n;
            if alpha[t] >= c {
                if positive {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if alpha[t] <= 0.0 {
                if positive {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free_sum += yg;
                free_n += 1;
            }
        }
        let rho = if free_n > 0 { free_sum / free_n as f64 } else { 0.5 * (ub + lb) };

        let keep: Vec<usize> = (0..n).filter(|&t| alpha[t] != alpha[t + n]).collect();
        Ok(Svr {
            kernel,
            support: x.select(Axis(0), &keep),
            coef: keep.iter().map(|&t| alpha[t] - alpha[t + n]).collect(),
            bias: -rho,
            iterations,
        })
    }

    pub fn predict_one(&self, x: ArrayView1<f64>) -> f64 {
        self.support
            .outer_iter()
            .zip(&self.coef)
            .map(|(s, c)| c * self.kernel.eval(s, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if self.support.nrows() > 0 && x.ncols() != self.support.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "svr expects {} features, got {}",
                self.support.ncols(),
                x.ncols()
            )));
        }
        Ok(x.outer_iter().map(|r| self.predict_one(r)).collect())
    }
}

/// Per-column affine standardization; zero-variance columns keep scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("cannot standardize zero rows".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Ok(Standardizer { mean, scale })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.scale
    }
}

/// Standardized features and target in front of an `Svr`, so `epsilon`
/// and `C` are in units of the target's training standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledSvr {
    pub features: Standardizer,
    pub target_mean: f64,
    pub target_scale: f64,
    pub svr: Svr,
}

impl ScaledSvr {
    pub fn fit(x: &Array2<f64>, y: &[f64], config: &SvrConfig) -> Result<Self> {
        let features = Standardizer::fit(x)?;
        let n = y.len() as f64;
        let target_mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - target_mean).powi(2)).sum::<f64>() / n).sqrt();
        let target_scale = if sd > 1e-12 { sd } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - target_mean) / target_scale).collect();
        let svr = Svr::fit(&features.transform(x), &ys, config)?;
        Ok(ScaledSvr {
            features,
            target_mean,
            target_scale,
            svr,
        })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self
            .svr
            .predict(&self.features.transform(x))?
            .into_iter()
            .map(|v| v * self.target_scale + self.target_mean)
            .collect())
    }
}
