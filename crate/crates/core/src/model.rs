//! The full network (spatial encoder, temporal encoder, pose head, motion
//! discriminator), its training step, evaluation and checkpoint archive.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body_model::{
    forward_kinematics_backward, forward_kinematics_cached, project_weak_perspective, BodyParams,
    KinematicTree, JOINT_COUNT, PARAM_DIM, POSE_DIM, SHAPE_DIM,
};
use crate::error::{Error, Result};
use crate::glance::{EncoderConfig, GlanceEncoder};
use crate::head::{
    adversarial_loss, discriminator_loss, loss_keypoints_2d, loss_keypoints_3d, loss_params,
    to_body_params, LossWeights, MotionDiscriminator, Regressor, RegressorConfig, SCALE_INDEX,
};
use crate::metrics::{MetricReport, SequenceMetrics};
use crate::nn::{Adam, AdamConfig, Module, Param};
use crate::synth::{mix_seed, GaitSequence};
use crate::temporal::{GruConfig, SequenceFeature, TemporalEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub gru: GruConfig,
    pub regressor: RegressorConfig,
    pub discriminator_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            gru: GruConfig::default(),
            regressor: RegressorConfig::default(),
            discriminator_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.gru.validate()?;
        self.regressor.validate()?;
        if self.gru.input_dim != self.encoder.fused_dim {
            return Err(Error::Config(format!(
                "GRU input_dim {} must equal encoder fused_dim {}",
                self.gru.input_dim, self.encoder.fused_dim
            )));
        }
        if self.discriminator_hidden == 0 {
            return Err(Error::Config("discriminator_hidden must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GlanceNet {
    pub config: ModelConfig,
    pub encoder: GlanceEncoder,
    pub temporal: TemporalEncoder,
    pub head: Regressor,
    pub disc: MotionDiscriminator,
}

/// Frames of several equal-length sequences as an `(B*T, 1, H, W)` batch,
/// sequence-major.
pub fn frames_to_batch(frames: &[&Array3<f32>]) -> Result<Array4<f64>> {
    let Some(first) = frames.first() else {
        return Err(Error::InvalidInput("empty batch".into()));
    };
    let (t, h, w) = first.dim();
    if let Some(bad) = frames.iter().find(|f| f.dim() != (t, h, w)) {
        return Err(Error::ShapeMismatch(format!(
            "sequences in a batch must share dims, got {:?} and {:?}",
            first.dim(),
            bad.dim()
        )));
    }
    let mut out = Array4::zeros((frames.len() * t, 1, h, w));
    for (b, f) in frames.iter().enumerate() {
        for k in 0..t {
            out.slice_mut(ndarray::s![b * t + k, 0, .., ..])
                .assign(&f.index_axis(Axis(0), k).mapv(f64::from));
        }
    }
    Ok(out)
}

/// Rows `b*T + t` of a sequence-major matrix regrouped per time step.
fn split_time(x: &Array2<f64>, batch: usize, len: usize) -> Vec<Array2<f64>> {
    (0..len)
        .map(|t| {
            let rows: Vec<usize> = (0..batch).map(|b| b * len + t).collect();
            x.select(Axis(0), &rows)
        })
        .collect()
}

fn merge_time(xs: &[Array2<f64>], batch: usize) -> Array2<f64> {
    let len = xs.len();
    let cols = xs[0].ncols();
    let mut out = Array2::zeros((batch * len, cols));
    for (t, x) in xs.iter().enumerate() {
        for b in 0..batch {
            out.row_mut(b * len + t).assign(&x.row(b));
        }
    }
    out
}

impl GlanceNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = GlanceEncoder::new(config.encoder.clone(), mix_seed(seed, 1))?;
        let temporal = TemporalEncoder::new(config.gru.clone(), mix_seed(seed, 2))?;
        let head = Regressor::new(config.regressor.clone(), config.gru.output_dim(), mix_seed(seed, 3))?;
        let disc = MotionDiscriminator::new(config.discriminator_hidden, mix_seed(seed, 4))?;
        Ok(GlanceNet {
            config,
            encoder,
            temporal,
            head,
            disc,
        })
    }

    /// Spatio-temporal features (frozen inference) of one sequence.
    pub fn sequence_feature(&self, frames: &Array3<f32>) -> Result<SequenceFeature> {
        let x = frames_to_batch(&[frames])?;
        let (f, _) = self.encoder.forward(&x, false)?;
        self.temporal.encode_sequence(&f)
    }

    /// Per-frame body parameters predicted for one sequence.
    pub fn predict(&self, frames: &Array3<f32>) -> Result<Vec<BodyParams>> {
        let feat = self.sequence_feature(frames)?;
        let (y, _) = self.head.forward(&feat.per_frame)?;
        y.outer_iter()
            .map(|row| to_body_params(row.as_slice().expect("contiguous row")))
            .collect()
    }

    /// Pose metrics of the model on `sequences`.
    pub fn evaluate(&self, sequences: &[GaitSequence]) -> Result<MetricReport> {
        let tree = KinematicTree::smpl_lite();
        let per: Vec<(String, SequenceMetrics)> = sequences
            .par_iter()
            .map(|s| {
                let pred = self.predict(&s.frames)?;
                Ok((s.sequence_id.clone(), SequenceMetrics::evaluate(&tree, &pred, &s.gt_params)?))
            })
            .collect::<Result<_>>()?;
        Ok(MetricReport::from_sequences(per.into_iter().collect()))
    }

    /// Initializes the regressor's starting point from the mean of
    /// ground-truth parameters.
    pub fn set_mean_from(&mut self, sequences: &[GaitSequence]) {
        let mut acc = vec![0.0; PARAM_DIM];
        let mut n = 0usize;
        for s in sequences {
            for p in &s.gt_params {
                acc.iter_mut().zip(p.to_vector()).for_each(|(a, v)| *a += v);
                n += 1;
            }
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
            let mean = BodyParams::from_vector(&acc).expect("85-vector");
            self.head.set_mean(&mean);
        }
    }
}

impl Module for GlanceNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit(&crate::nn::join(prefix, "encoder"), f);
        self.temporal.visit(&crate::nn::join(prefix, "temporal"), f);
        self.head.visit(&crate::nn::join(prefix, "head"), f);
        self.disc.visit(&crate::nn::join(prefix, "disc"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_mut(&crate::nn::join(prefix, "encoder"), f);
        self.temporal.visit_mut(&crate::nn::join(prefix, "temporal"), f);
        self.head.visit_mut(&crate::nn::join(prefix, "head"), f);
        self.disc.visit_mut(&crate::nn::join(prefix, "disc"), f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss_2d: f64,
    pub loss_3d: f64,
    pub loss_param: f64,
    pub loss_adv: f64,
    pub total: f64,
    pub disc: f64,
}

impl LossRecord {
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        w.w_2d * self.loss_2d + w.w_3d * self.loss_3d + w.w_param * self.loss_param + w.w_adv * self.loss_adv
    }
}

#[derive(Default)]
pub struct FrameLoss {
    pub l2d: f64,
    pub l3d: f64,
    pub lparam: f64,
    pub grad: Vec<f64>,
}

/// Loss terms of one predicted frame and the gradient of the weighted sum
/// with respect to its mapped 85-vector.
pub fn frame_loss(tree: &KinematicTree, pred: &[f64], gt: &BodyParams, gt_joints: &[[f64; 3]], w: &LossWeights) -> Result<FrameLoss> {
    let p = BodyParams::from_vector(pred)?;
    let cache = forward_kinematics_cached(tree, &p)?;
    let joints = cache.joint_positions();
    let (l3d, g3) = loss_keypoints_3d(&joints.joints, gt_joints)?;
    let pred2 = project_weak_perspective(&joints, &p.camera);
    let gt2 = project_weak_perspective(&crate::body_model::JointPositions { joints: gt_joints.to_vec() }, &gt.camera);
    let (l2d, g2) = loss_keypoints_2d(&pred2, &gt2)?;
    let (lparam, gp) = loss_params(&p, gt)?;

    let s = p.camera[0];
    let mut d_joints: Vec<[f64; 3]> = g3.iter().map(|g| g.map(|v| w.w_3d * v)).collect();
    let mut d_cam = [0.0; 3];
    for (j, g) in g2.iter().enumerate() {
        let g = [w.w_2d * g[0], w.w_2d * g[1]];
        d_joints[j][0] += s * g[0];
        d_joints[j][1] += s * g[1];
        d_cam[0] += g[0] * joints.joints[j][0] + g[1] * joints.joints[j][1];
        d_cam[1] += g[0];
        d_cam[2] += g[1];
    }
    let fk = forward_kinematics_backward(tree, &p, &cache, &d_joints);
    let mut grad = vec![0.0; PARAM_DIM];
    for k in 0..SHAPE_DIM {
        grad[k] = fk.shape[k] + w.w_param * gp.shape[k];
    }
    for j in 0..JOINT_COUNT {
        for k in 0..3 {
            grad[SHAPE_DIM + 3 * j + k] = fk.pose[j][k] + w.w_param * gp.pose[j][k];
        }
    }
    grad[SCALE_INDEX..].copy_from_slice(&d_cam);
    Ok(FrameLoss { l2d, l3d, lparam, grad })
}

fn pose_columns(pred: &Array2<f64>) -> Array2<f64> {
    pred.slice(ndarray::s![.., SHAPE_DIM..SHAPE_DIM + POSE_DIM]).to_owned()
}

/// Owner of the parameters and optimizer state during phase-I training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: GlanceNet,
    gen_adam: Adam,
    disc_adam: Adam,
    pub step: usize,
    tree: KinematicTree,
}

impl Trainer {
    pub fn new(model: GlanceNet, adam: AdamConfig) -> Self {
        Trainer {
            model,
            gen_adam: Adam::new(adam),
            disc_adam: Adam::new(adam),
            step: 0,
            tree: KinematicTree::smpl_lite(),
        }
    }

    /// One Adam update of encoder, temporal encoder and head on the weighted
    /// loss, followed by one discriminator update.
    pub fn train_step(&mut self, batch: &[&GaitSequence], lr: f64, w: &LossWeights) -> Result<LossRecord> {
        w.validate()?;
        let frames: Vec<&Array3<f32>> = batch.iter().map(|s| &s.frames).collect();
        let x = frames_to_batch(&frames)?;
        let b = batch.len();
        let t = batch[0].len();
        let n = b * t;
        let model = &mut self.model;
        model.zero_grad();

        let (feats, enc_cache) = model.encoder.forward(&x, true)?;
        let xs = split_time(&feats, b, t);
        let (outs, gru_cache) = model.temporal.forward(&xs)?;
        let h = merge_time(&outs, b);
        let (pred, head_cache) = model.head.forward(&h)?;

        let tree = &self.tree;
        let frame_losses: Vec<FrameLoss> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (bi, ti) = (i / t, i % t);
                let seq = batch[bi];
                frame_loss(
                    tree,
                    pred.row(i).as_slice().expect("contiguous row"),
                    &seq.gt_params[ti],
                    &seq.gt_joints[ti].joints,
                    w,
                )
            })
            .collect::<Result<_>>()?;
        let mut d_pred = Array2::zeros((n, PARAM_DIM));
        let (mut l2d, mut l3d, mut lparam) = (0.0, 0.0, 0.0);
        for (i, fl) in frame_losses.iter().enumerate() {
            l2d += fl.l2d;
            l3d += fl.l3d;
            lparam += fl.lparam;
            d_pred
                .row_mut(i)
                .iter_mut()
                .zip(&fl.grad)
                .for_each(|(d, g)| *d = g / n as f64);
        }
        l2d /= n as f64;
        l3d /= n as f64;
        lparam /= n as f64;

        let fake_poses = split_time(&pose_columns(&pred), b, t);
        let (scores, disc_cache) = model.disc.forward(&fake_poses)?;
        let (ladv, d_scores) = adversarial_loss(&scores);
        let d_scores: Vec<f64> = d_scores.iter().map(|d| d * w.w_adv).collect();
        let d_poses = model.disc.backward(&disc_cache, &d_scores);
        let d_poses = merge_time(&d_poses, b);
        d_pred
            .slice_mut(ndarray::s![.., SHAPE_DIM..SHAPE_DIM + POSE_DIM])
            .zip_mut_with(&d_poses, |d, g| *d += g);

        let record = LossRecord {
            step: self.step,
            lr,
            loss_2d: l2d,
            loss_3d: l3d,
            loss_param: lparam,
            loss_adv: ladv,
            total: w.w_2d * l2d + w.w_3d * l3d + w.w_param * lparam + w.w_adv * ladv,
            disc: f64::NAN,
        };
        if !record.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!(
                    "2d {l2d}, 3d {l3d}, param {lparam}, adv {ladv}"
                ),
            });
        }

        let dh = model.head.backward(&head_cache, &d_pred);
        let d_outs = split_time(&dh, b, t);
        let d_xs = model.temporal.backward(&gru_cache, &d_outs);
        let d_feats = merge_time(&d_xs, b);
        model.encoder.backward(&enc_cache, &d_feats);

        self.gen_adam.step(&mut model.encoder, "encoder", lr);
        self.gen_adam.step_more(&mut model.temporal, "temporal", lr);
        self.gen_adam.step_more(&mut model.head, "head", lr);

        model.disc.zero_grad();
        let real_poses: Vec<Array2<f64>> = (0..t)
            .map(|k| {
                Array2::from_shape_fn((b, POSE_DIM), |(bi, j)| batch[bi].gt_params[k].pose[j / 3][j % 3])
            })
            .collect();
        let (real_scores, real_cache) = model.disc.forward(&real_poses)?;
        let (fake_scores, fake_cache) = model.disc.forward(&fake_poses)?;
        let (ldisc, g_real, g_fake) = discriminator_loss(&real_scores, &fake_scores);
        model.disc.backward(&real_cache, &g_real);
        model.disc.backward(&fake_cache, &g_fake);
        self.disc_adam.step(&mut model.disc, "disc", lr);
        model.disc.zero_grad();

        self.step += 1;
        Ok(LossRecord { disc: ldisc, ..record })
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GLNCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

/// Archive layout: magic, u64 LE header length, JSON header (config and
/// tensor registry), then every tensor as little-endian f64.
pub fn checkpoint_bytes(model: &GlanceNet) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    model.visit("", &mut |name, p| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: p.shape.clone(),
            trainable: p.trainable,
            offset,
            len: p.len(),
        });
        offset += p.len();
        for v in &p.value {
            data.extend_from_slice(&v.to_le_bytes());
        }
    });
    let header = serde_json::to_vec(&CheckpointHeader {
        format: "f64-le".into(),
        config: model.config.clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn save_checkpoint(model: &GlanceNet, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<GlanceNet> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint archive"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| Error::format(path, e.to_string()))?;
    let data = &bytes[16 + hlen..];
    let mut model = GlanceNet::new(header.config.clone(), 0)?;
    let registry: BTreeMap<&str, &TensorEntry> = header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut problem: Option<Error> = None;
    let mut seen = 0usize;
    model.visit_mut("", &mut |name, p| {
        if problem.is_some() {
            return;
        }
        let Some(t) = registry.get(name) else {
            problem = Some(Error::ShapeMismatch(format!("checkpoint lacks tensor {name}")));
            return;
        };
        if t.shape != p.shape {
            problem = Some(Error::ShapeMismatch(format!(
                "tensor {name}: checkpoint shape {:?}, model shape {:?}",
                t.shape, p.shape
            )));
            return;
        }
        let Some(raw) = data.get(8 * t.offset..8 * (t.offset + t.len)) else {
            problem = Some(Error::format(path, format!("tensor {name} out of bounds")));
            return;
        };
        for (v, c) in p.value.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
        }
        seen += 1;
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if seen != header.tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has {} tensors, model uses {seen}",
            header.tensors.len()
        )));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<GlanceNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, path)
}

/// Mean of consecutive windows of `factor` values.
pub fn average_pool(v: &Array1<f64>, factor: usize) -> Result<Array1<f64>> {
    if factor == 0 || v.len() % factor != 0 {
        return Err(Error::Config(format!(
            "pool factor {factor} does not divide feature length {}",
            v.len()
        )));
    }
    Ok(Array1::from_iter(
        v.as_slice()
            .expect("contiguous")
            .chunks(factor)
            .map(|c| c.iter().sum::<f64>() / factor as f64),
    ))
}
