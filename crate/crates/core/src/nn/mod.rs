//! Minimal float64 layers with explicit backward passes.
//!
//! Every layer exposes `forward(&self, ..) -> (output, cache)` and
//! `backward(&mut self, &cache, grad_output) -> grad_input`; parameter
//! gradients accumulate into [`Param::grad`] until [`Module::zero_grad`].

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod norm;

use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::BatchNorm2d;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
    /// Buffers such as running statistics are stored but never optimized.
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: &[usize], value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let n = value.len();
        Param {
            shape: shape.to_vec(),
            value,
            grad: vec![0.0; n],
            trainable: true,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self::new(shape, vec![v; shape.iter().product()])
    }

    pub fn buffer(shape: &[usize], v: f64) -> Self {
        let mut p = Self::filled(shape, v);
        p.trainable = false;
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Kaiming (fan-in) normal initialization for ReLU networks.
pub fn kaiming_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Param {
    let std = (2.0 / fan_in as f64).sqrt();
    normal(rng, shape, std)
}

pub fn normal<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Param {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Param::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Param {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    let n = shape.iter().product();
    Param::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

/// Visitor over named parameters. Names are `/`-separated paths.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| {
            if p.trainable {
                n += p.len()
            }
        });
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

/// Trainable parameter values concatenated in visiting order.
pub fn flatten_values<M: Module + ?Sized>(module: &M) -> Vec<f64> {
    let mut out = Vec::new();
    module.visit("", &mut |_, p| {
        if p.trainable {
            out.extend_from_slice(&p.value)
        }
    });
    out
}

pub fn flatten_grads<M: Module + ?Sized>(module: &M) -> Vec<f64> {
    let mut out = Vec::new();
    module.visit("", &mut |_, p| {
        if p.trainable {
            out.extend_from_slice(&p.grad)
        }
    });
    out
}

/// Inverse of [`flatten_values`].
pub fn assign_values<M: Module + ?Sized>(module: &mut M, values: &[f64]) {
    let mut at = 0;
    module.visit_mut("", &mut |_, p| {
        if p.trainable {
            let n = p.len();
            p.value.copy_from_slice(&values[at..at + n]);
            at += n;
        }
    });
    assert_eq!(at, values.len(), "parameter vector length");
}

#[derive(Clone, Debug)]
pub struct ReluCache {
    mask: Vec<bool>,
}

pub fn relu4(x: Array4<f64>) -> (Array4<f64>, ReluCache) {
    let mask: Vec<bool> = x.iter().map(|v| *v > 0.0).collect();
    (x.mapv(|v| v.max(0.0)), ReluCache { mask })
}

pub fn relu4_backward(cache: &ReluCache, mut dy: Array4<f64>) -> Array4<f64> {
    dy.iter_mut()
        .zip(&cache.mask)
        .for_each(|(g, m)| if !*m { *g = 0.0 });
    dy
}

pub fn relu2(x: Array2<f64>) -> (Array2<f64>, ReluCache) {
    let mask: Vec<bool> = x.iter().map(|v| *v > 0.0).collect();
    (x.mapv(|v| v.max(0.0)), ReluCache { mask })
}

pub fn relu2_backward(cache: &ReluCache, mut dy: Array2<f64>) -> Array2<f64> {
    dy.iter_mut()
        .zip(&cache.mask)
        .for_each(|(g, m)| if !*m { *g = 0.0 });
    dy
}

/// `(N, C, H, W)` to `(N*H*W, C)`, one row per spatial location.
pub fn nchw_to_rows(x: &Array4<f64>) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::zeros((n * h * w, c));
    for (ni, sample) in x.outer_iter().enumerate() {
        for (ci, plane) in sample.outer_iter().enumerate() {
            for (k, v) in plane.iter().enumerate() {
                out[[ni * h * w + k, ci]] = *v;
            }
        }
    }
    out
}

pub fn rows_to_nchw(x: &Array2<f64>, n: usize, h: usize, w: usize) -> Array4<f64> {
    let c = x.ncols();
    let mut out = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            for k in 0..h * w {
                out[[ni, ci, k / w, k % w]] = x[[ni * h * w + k, ci]];
            }
        }
    }
    out
}

/// Spatial global average pooling `(N, C, H, W) -> (N, C)`.
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (_, _, h, w) = x.dim();
    let hw = (h * w) as f64;
    x.sum_axis(Axis(3)).sum_axis(Axis(2)) / hw
}

pub fn global_avg_pool_backward(dy: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c) = dy.dim();
    let hw = (h * w) as f64;
    let mut out = Array4::zeros((n, c, h, w));
    for ni in 0..n {
        for ci in 0..c {
            out.slice_mut(ndarray::s![ni, ci, .., ..])
                .fill(dy[[ni, ci]] / hw);
        }
    }
    out
}

/// Channel concatenation of feature maps sharing `(N, H, W)`.
pub fn concat_channels(maps: &[&Array4<f64>]) -> Array4<f64> {
    let views: Vec<_> = maps.iter().map(|m| m.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("maps share N, H, W")
}
