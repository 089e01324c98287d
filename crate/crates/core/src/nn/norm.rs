use ndarray::{Array4, Axis};

use super::{join, Module, Param};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics; evaluation mode uses the running estimates, which are
/// refreshed from the batch statistics whenever a training-mode backward
/// pass runs.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
}

#[derive(Clone, Debug)]
pub enum BnCache {
    Train {
        x_hat: Array4<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Eval {
        x_hat: Array4<f64>,
        inv_std: Vec<f64>,
    },
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(&[channels], 0.0),
            running_var: Param::buffer(&[channels], 1.0),
        }
    }

    pub fn forward(&self, x: &Array4<f64>, train: bool) -> (Array4<f64>, BnCache) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "batch-norm channels");
        let m = (n * h * w) as f64;
        let (mean, var) = if train {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ci in 0..c {
                let lane = x.index_axis(Axis(1), ci);
                let mu = lane.sum() / m;
                mean[ci] = mu;
                var[ci] = lane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m;
            }
            (mean, var)
        } else {
            (self.running_mean.value.clone(), self.running_var.value.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut x_hat = x.clone();
        for ci in 0..c {
            x_hat
                .index_axis_mut(Axis(1), ci)
                .mapv_inplace(|v| (v - mean[ci]) * inv_std[ci]);
        }
        let mut y = x_hat.clone();
        for ci in 0..c {
            let (g, b) = (self.gamma.value[ci], self.beta.value[ci]);
            y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| g * v + b);
        }
        let cache = if train {
            BnCache::Train {
                x_hat,
                inv_std,
                mean,
                var,
            }
        } else {
            BnCache::Eval { x_hat, inv_std }
        };
        (y, cache)
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = dy.dim();
        match cache {
            BnCache::Eval { x_hat, inv_std } => {
                // Running statistics are constants here.
                let mut dx = dy.clone();
                for ci in 0..c {
                    let lane = dy.index_axis(Axis(1), ci);
                    let xh = x_hat.index_axis(Axis(1), ci);
                    self.beta.grad[ci] += lane.sum();
                    self.gamma.grad[ci] += lane.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
                    let k = self.gamma.value[ci] * inv_std[ci];
                    dx.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * k);
                }
                dx
            }
            BnCache::Train {
                x_hat,
                inv_std,
                mean,
                var,
            } => {
                let m = (n * h * w) as f64;
                let mut dx = Array4::zeros((n, c, h, w));
                for ci in 0..c {
                    let g = dy.index_axis(Axis(1), ci);
                    let xh = x_hat.index_axis(Axis(1), ci);
                    let sum_dy = g.sum();
                    let sum_dy_xh: f64 = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
                    self.gamma.grad[ci] += sum_dy_xh;
                    self.beta.grad[ci] += sum_dy;
                    let k = self.gamma.value[ci] * inv_std[ci] / m;
                    let mut out = dx.index_axis_mut(Axis(1), ci);
                    ndarray::Zip::from(&mut out)
                        .and(&g)
                        .and(&xh)
                        .for_each(|o, &gv, &xv| *o = k * (m * gv - sum_dy - xv * sum_dy_xh));
                }
                for ci in 0..c {
                    let rm = &mut self.running_mean.value[ci];
                    *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[ci];
                    let rv = &mut self.running_var.value[ci];
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[ci];
                }
                dx
            }
        }
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
