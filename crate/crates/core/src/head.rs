//! Pose head: iterative parameter regressor, keypoint/parameter losses and a
//! recurrent motion discriminator.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body_model::rotation::normalize_axis_angle;
use crate::body_model::{BodyParams, JOINT_COUNT, PARAM_DIM, POSE_DIM, SHAPE_DIM};
use crate::error::{Error, Result};
use crate::nn::{join, relu2, relu2_backward, Linear, Module, Param, ReluCache};
use crate::temporal::{GruConfig, TemporalEncoder};

/// Column of the camera scale in the 85-vector.
pub const SCALE_INDEX: usize = SHAPE_DIM + POSE_DIM;
/// Keeps the mapped camera scale strictly positive.
pub const MIN_SCALE: f64 = 1e-6;
const OUTPUT_INIT_STD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub iterations: usize,
    pub hidden: usize,
    pub param_dim: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            iterations: 3,
            hidden: 256,
            param_dim: PARAM_DIM,
        }
    }
}

impl RegressorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.hidden == 0 {
            return Err(Error::Config("regressor needs iterations >= 1 and hidden > 0".into()));
        }
        if self.param_dim != PARAM_DIM {
            return Err(Error::Config(format!("param_dim must be {PARAM_DIM}, got {}", self.param_dim)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_2d: f64,
    pub w_3d: f64,
    pub w_param: f64,
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_2d: 1.0,
            w_3d: 1.0,
            w_param: 0.1,
            w_adv: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.w_2d, self.w_3d, self.w_param, self.w_adv]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Raw regressor space for a parameter vector (inverts the scale mapping).
pub fn to_raw(params: &BodyParams) -> Vec<f64> {
    let mut v = params.to_vector();
    v[SCALE_INDEX] = softplus_inverse(v[SCALE_INDEX] - MIN_SCALE);
    v
}

/// Splits a mapped 85-vector into `BodyParams`, normalizing each axis-angle
/// to its representative with norm below 2 pi.
pub fn to_body_params(v: &[f64]) -> Result<BodyParams> {
    let mut p = BodyParams::from_vector(v)?;
    for w in p.pose.iter_mut() {
        *w = normalize_axis_angle(*w);
    }
    Ok(p)
}

#[derive(Clone, Debug)]
pub struct Regressor {
    pub config: RegressorConfig,
    pub input_dim: usize,
    pub fc1: Linear,
    pub fc2: Linear,
    pub out: Linear,
    /// Starting point of the refinement, in raw space.
    pub mean: Param,
}

#[derive(Clone, Debug)]
struct IterationCache {
    input: Array2<f64>,
    h1: Array2<f64>,
    r1: ReluCache,
    h2: Array2<f64>,
    r2: ReluCache,
}

#[derive(Clone, Debug)]
pub struct RegressorCache {
    iterations: Vec<IterationCache>,
    raw_scale: Array1<f64>,
}

impl Regressor {
    pub fn new(config: RegressorConfig, input_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut mean = Param::buffer(&[PARAM_DIM], 0.0);
        mean.value = to_raw(&BodyParams::rest(JOINT_COUNT));
        Ok(Regressor {
            input_dim,
            fc1: Linear::new(&mut rng, input_dim + PARAM_DIM, h),
            fc2: Linear::new(&mut rng, h, h),
            out: Linear::new_scaled(&mut rng, h, PARAM_DIM, OUTPUT_INIT_STD),
            mean,
            config,
        })
    }

    pub fn set_mean(&mut self, params: &BodyParams) {
        self.mean.value = to_raw(params);
    }

    pub fn mean_params(&self) -> BodyParams {
        let mut v = self.mean.value.clone();
        v[SCALE_INDEX] = softplus(v[SCALE_INDEX]) + MIN_SCALE;
        BodyParams::from_vector(&v).expect("85-vector")
    }

    /// `features` is `N x input_dim`; returns mapped `N x 85` parameters.
    pub fn forward(&self, features: &Array2<f64>) -> Result<(Array2<f64>, RegressorCache)> {
        if features.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "regressor expects {} features, got {}",
                self.input_dim,
                features.ncols()
            )));
        }
        let n = features.nrows();
        let mean = Array1::from(self.mean.value.clone());
        let mut cur = Array2::from_shape_fn((n, PARAM_DIM), |(_, j)| mean[j]);
        let mut iterations = Vec::with_capacity(self.config.iterations);
        for _ in 0..self.config.iterations {
            let input = concatenate(Axis(1), &[features.view(), cur.view()]).expect("rows match");
            let (h1, r1) = relu2(self.fc1.forward(&input));
            let (h2, r2) = relu2(self.fc2.forward(&h1));
            cur = cur + self.out.forward(&h2);
            iterations.push(IterationCache { input, h1, r1, h2, r2 });
        }
        let raw_scale = cur.column(SCALE_INDEX).to_owned();
        cur.column_mut(SCALE_INDEX).mapv_inplace(|v| softplus(v) + MIN_SCALE);
        Ok((cur, RegressorCache { iterations, raw_scale }))
    }

    /// Gradient of the mapped output back to the features.
    pub fn backward(&mut self, cache: &RegressorCache, d_out: &Array2<f64>) -> Array2<f64> {
        let mut d_cur = d_out.clone();
        for (d, raw) in d_cur.column_mut(SCALE_INDEX).iter_mut().zip(cache.raw_scale.iter()) {
            *d *= sigmoid(*raw);
        }
        let mut d_feat = Array2::zeros((d_out.nrows(), self.input_dim));
        for it in cache.iterations.iter().rev() {
            let dh2 = self.out.backward(&it.h2, &d_cur);
            let dh2 = relu2_backward(&it.r2, dh2);
            let dh1 = self.fc2.backward(&it.h1, &dh2);
            let dh1 = relu2_backward(&it.r1, dh1);
            let d_in = self.fc1.backward(&it.input, &dh1);
            d_feat += &d_in.slice(s![.., ..self.input_dim]);
            d_cur += &d_in.slice(s![.., self.input_dim..]);
        }
        d_feat
    }

    /// Single-feature inference.
    pub fn regress_params(&self, feature: &[f64]) -> Result<BodyParams> {
        let x = Array2::from_shape_vec((1, feature.len()), feature.to_vec()).expect("row");
        let (y, _) = self.forward(&x)?;
        to_body_params(y.row(0).as_slice().expect("contiguous row"))
    }
}

impl Module for Regressor {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
        self.out.visit(&join(prefix, "out"), f);
        f(&join(prefix, "mean"), &self.mean);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
        f(&join(prefix, "mean"), &mut self.mean);
    }
}

fn check_len<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!("{} vs {} keypoints", a.len(), b.len())));
    }
    Ok(())
}

/// `(1/J) sum ||pred - gt||^2` with its gradient w.r.t. `pred`.
pub fn loss_keypoints_3d(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    check_len(pred, gt)?;
    let j = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = [p[0] - g[0], p[1] - g[1], p[2] - g[2]];
            loss += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            d.map(|v| 2.0 * v / j)
        })
        .collect();
    Ok((loss / j, grad))
}

/// Same contract as [`loss_keypoints_3d`] in image coordinates.
pub fn loss_keypoints_2d(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<(f64, Vec<[f64; 2]>)> {
    check_len(pred, gt)?;
    let j = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = [p[0] - g[0], p[1] - g[1]];
            loss += d[0] * d[0] + d[1] * d[1];
            d.map(|v| 2.0 * v / j)
        })
        .collect();
    Ok((loss / j, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLossGrad {
    pub shape: [f64; SHAPE_DIM],
    pub pose: Vec<[f64; 3]>,
}

/// `||d beta||^2 / 10 + ||d theta||^2 / 72`.
pub fn loss_params(pred: &BodyParams, gt: &BodyParams) -> Result<(f64, ParamLossGrad)> {
    if pred.pose.len() != gt.pose.len() {
        return Err(Error::ShapeMismatch("pose lengths differ".into()));
    }
    let pose_dim = (3 * pred.pose.len()) as f64;
    let mut shape = [0.0; SHAPE_DIM];
    let mut ls = 0.0;
    for k in 0..SHAPE_DIM {
        let d = pred.shape[k] - gt.shape[k];
        ls += d * d;
        shape[k] = 2.0 * d / SHAPE_DIM as f64;
    }
    let mut lp = 0.0;
    let pose = pred
        .pose
        .iter()
        .zip(&gt.pose)
        .map(|(p, g)| {
            let d = [p[0] - g[0], p[1] - g[1], p[2] - g[2]];
            lp += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            d.map(|v| 2.0 * v / pose_dim)
        })
        .collect();
    Ok((ls / SHAPE_DIM as f64 + lp / pose_dim, ParamLossGrad { shape, pose }))
}

/// Generator term: mean of `(score - 1)^2`, with its gradient.
pub fn adversarial_loss(scores: &[f64]) -> (f64, Vec<f64>) {
    let n = scores.len().max(1) as f64;
    let loss = scores.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / n;
    (loss, scores.iter().map(|s| 2.0 * (s - 1.0) / n).collect())
}

/// Discriminator term: mean `(real - 1)^2` plus mean `fake^2`.
pub fn discriminator_loss(real: &[f64], fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nr = real.len().max(1) as f64;
    let nf = fake.len().max(1) as f64;
    let loss = real.iter().map(|s| (s - 1.0).powi(2)).sum::<f64>() / nr
        + fake.iter().map(|s| s * s).sum::<f64>() / nf;
    (
        loss,
        real.iter().map(|s| 2.0 * (s - 1.0) / nr).collect(),
        fake.iter().map(|s| 2.0 * s / nf).collect(),
    )
}

/// Recurrent real/fake scorer over `T x 72` pose sequences.
#[derive(Clone, Debug)]
pub struct MotionDiscriminator {
    pub gru: TemporalEncoder,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorCache {
    gru: crate::temporal::TemporalCache,
    last: Array2<f64>,
    len: usize,
}

impl MotionDiscriminator {
    pub fn new(hidden: usize, seed: u64) -> Result<Self> {
        let gru = TemporalEncoder::new(
            GruConfig {
                input_dim: POSE_DIM,
                hidden_dim: hidden,
                layers: 1,
                bidirectional: false,
            },
            seed,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        Ok(MotionDiscriminator {
            gru,
            out: Linear::new_scaled(&mut rng, hidden, 1, (1.0 / hidden as f64).sqrt()),
        })
    }

    /// `poses[t]` is `B x 72`; returns one score per sequence.
    pub fn forward(&self, poses: &[Array2<f64>]) -> Result<(Vec<f64>, DiscriminatorCache)> {
        if poses.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "motion discriminator needs at least 2 frames, got {}",
                poses.len()
            )));
        }
        let (out, gru) = self.gru.forward(poses)?;
        let last = out[out.len() - 1].clone();
        let scores = self.out.forward(&last).column(0).to_vec();
        Ok((
            scores,
            DiscriminatorCache {
                gru,
                last,
                len: poses.len(),
            },
        ))
    }

    pub fn backward(&mut self, cache: &DiscriminatorCache, d_scores: &[f64]) -> Vec<Array2<f64>> {
        let ds = Array2::from_shape_vec((d_scores.len(), 1), d_scores.to_vec()).expect("column");
        let d_last = self.out.backward(&cache.last, &ds);
        let mut d_out = vec![Array2::zeros(d_last.dim()); cache.len];
        d_out[cache.len - 1] = d_last;
        self.gru.backward(&cache.gru, &d_out)
    }

    /// Score of a single `T x 72` sequence.
    pub fn score(&self, poses: &Array2<f64>) -> Result<f64> {
        let xs: Vec<Array2<f64>> = poses.outer_iter().map(|r| r.to_owned().insert_axis(Axis(0))).collect();
        Ok(self.forward(&xs)?.0[0])
    }
}

impl Module for MotionDiscriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.gru.visit(&join(prefix, "gru"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.gru.visit_mut(&join(prefix, "gru"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
