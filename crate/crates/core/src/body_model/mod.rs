//! SMPL-lite: a fixed kinematic tree whose bone lengths are linear in a shape
//! vector, posed by axis-angle forward kinematics.
//!
//! Coordinates are meters with `+y` up, `+x` toward the subject's left and
//! `+z` toward the camera when the root rotation is zero.

pub mod rotation;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use rotation::{rodrigues, rodrigues_jacobian};

pub const JOINT_COUNT: usize = 24;
pub const SHAPE_DIM: usize = 10;
pub const POSE_DIM: usize = JOINT_COUNT * 3;
pub const CAMERA_DIM: usize = 3;
/// Flattened `(shape, pose, camera)` length.
pub const PARAM_DIM: usize = SHAPE_DIM + POSE_DIM + CAMERA_DIM;

pub const TREE_FORMAT_VERSION: u32 = 1;

/// Lengths are clamped below at one millimeter.
pub const MIN_BONE_LENGTH: f64 = 1e-3;

pub const SURFACE_SAMPLES_PER_BONE: usize = 5;
pub const SURFACE_RADIUS: f64 = 0.03;
const SURFACE_FRACTIONS: [f64; SURFACE_SAMPLES_PER_BONE] = [0.1, 0.3, 0.5, 0.7, 0.9];

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

const SMPL_PARENTS: [i32; JOINT_COUNT] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

// Rest-pose offset of each joint from its parent (arms hanging).
const SMPL_OFFSETS: [[f64; 3]; JOINT_COUNT] = [
    [0.0, 0.0, 0.0],
    [0.07, -0.09, 0.0],
    [-0.07, -0.09, 0.0],
    [0.0, 0.11, 0.0],
    [0.0, -0.38, 0.0],
    [0.0, -0.38, 0.0],
    [0.0, 0.13, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, -0.40, 0.0],
    [0.0, 0.06, 0.0],
    [0.0, -0.05, 0.12],
    [0.0, -0.05, 0.12],
    [0.0, 0.21, 0.0],
    [0.07, 0.12, 0.0],
    [-0.07, 0.12, 0.0],
    [0.0, 0.09, 0.0],
    [0.10, 0.02, 0.0],
    [-0.10, 0.02, 0.0],
    [0.0, -0.27, 0.0],
    [0.0, -0.27, 0.0],
    [0.0, -0.25, 0.0],
    [0.0, -0.25, 0.0],
    [0.0, -0.08, 0.0],
    [0.0, -0.08, 0.0],
];

/// Relative change of every bone per unit of shape component 0 (stature).
/// Matches the cohort height spread: 8.93 cm over a 168.84 cm template.
pub const STATURE_FRACTION: f64 = 8.93 / 168.84;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicTree {
    pub version: u32,
    pub joint_count: usize,
    /// Parent index per joint, `-1` for the root. Parents precede children.
    pub parent: Vec<i32>,
    pub rest_directions: Vec<[f64; 3]>,
    pub rest_lengths_base: Vec<f64>,
    /// `joint_count x SHAPE_DIM`, meters per unit of shape.
    pub length_blend: Vec<[f64; SHAPE_DIM]>,
}

impl KinematicTree {
    /// The 24-joint SMPL-lite skeleton.
    pub fn smpl_lite() -> Self {
        let mut rest_directions = Vec::with_capacity(JOINT_COUNT);
        let mut rest_lengths_base = Vec::with_capacity(JOINT_COUNT);
        for (i, o) in SMPL_OFFSETS.iter().enumerate() {
            if i == 0 {
                rest_directions.push([0.0, 1.0, 0.0]);
                rest_lengths_base.push(0.0);
                continue;
            }
            let v = Vector3::from(*o);
            let n = v.norm();
            let d = v / n;
            rest_directions.push([d.x, d.y, d.z]);
            rest_lengths_base.push(n);
        }

        let mut blend = vec![[0.0; SHAPE_DIM]; JOINT_COUNT];
        for i in 1..JOINT_COUNT {
            blend[i][0] = STATURE_FRACTION * rest_lengths_base[i];
        }
        // 1..=3 drive girth only and leave bone lengths alone.
        let scaled = |blend: &mut Vec<[f64; SHAPE_DIM]>, col: usize, bones: &[usize], f: f64| {
            for &b in bones {
                blend[b][col] = f * rest_lengths_base[b];
            }
        };
        scaled(&mut blend, 4, &[18, 19, 20, 21, 22, 23], 0.03);
        scaled(&mut blend, 5, &[13, 14, 16, 17], 0.04);
        scaled(&mut blend, 6, &[10, 11], 0.05);
        // Leg/torso ratio with the vertical span held fixed.
        let leg = [4usize, 7];
        let torso = [3usize, 6, 9, 12];
        let leg_span: f64 = leg
            .iter()
            .map(|&b| rest_lengths_base[b] * rest_directions[b][1].abs())
            .sum();
        let torso_span: f64 = torso
            .iter()
            .map(|&b| rest_lengths_base[b] * rest_directions[b][1].abs())
            .sum();
        scaled(&mut blend, 7, &[4, 5, 7, 8], 0.02);
        scaled(&mut blend, 7, &torso, -0.02 * leg_span / torso_span);
        scaled(&mut blend, 8, &[22, 23], 0.05);
        scaled(&mut blend, 9, &[18, 19], 0.03);
        scaled(&mut blend, 9, &[20, 21], -0.03 * 0.27 / 0.25);

        KinematicTree {
            version: TREE_FORMAT_VERSION,
            joint_count: JOINT_COUNT,
            parent: SMPL_PARENTS.to_vec(),
            rest_directions,
            rest_lengths_base,
            length_blend: blend,
        }
    }

    /// A tree built from explicit offsets; mainly for small test chains.
    pub fn from_offsets(parent: Vec<i32>, offsets: &[[f64; 3]]) -> Result<Self> {
        let n = parent.len();
        if offsets.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} parents but {} offsets",
                n,
                offsets.len()
            )));
        }
        let mut rest_directions = Vec::with_capacity(n);
        let mut rest_lengths_base = Vec::with_capacity(n);
        for (i, o) in offsets.iter().enumerate() {
            let v = Vector3::from(*o);
            let len = v.norm();
            if i == 0 || len == 0.0 {
                rest_directions.push([0.0, 1.0, 0.0]);
                rest_lengths_base.push(if i == 0 { 0.0 } else { len });
            } else {
                let d = v / len;
                rest_directions.push([d.x, d.y, d.z]);
                rest_lengths_base.push(len);
            }
        }
        let tree = KinematicTree {
            version: TREE_FORMAT_VERSION,
            joint_count: n,
            parent,
            rest_directions,
            rest_lengths_base,
            length_blend: vec![[0.0; SHAPE_DIM]; n],
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joint_count;
        if n == 0 {
            return Err(Error::InvalidInput("empty kinematic tree".into()));
        }
        if self.parent.len() != n
            || self.rest_directions.len() != n
            || self.rest_lengths_base.len() != n
            || self.length_blend.len() != n
        {
            return Err(Error::ShapeMismatch(format!(
                "kinematic tree arrays must all have joint_count = {n} entries"
            )));
        }
        if self.parent[0] != -1 {
            return Err(Error::InvalidInput("joint 0 must be the root".into()));
        }
        for (i, &p) in self.parent.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= i {
                return Err(Error::InvalidInput(format!(
                    "joint {i} has parent {p}; parents must precede children and only the root has none"
                )));
            }
        }
        for (i, d) in self.rest_directions.iter().enumerate() {
            let norm = Vector3::from(*d).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "rest direction of joint {i} has norm {norm}"
                )));
            }
        }
        if self.rest_lengths_base.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidInput(
                "rest lengths must be finite and non-negative".into(),
            ));
        }
        if self
            .length_blend
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("length blend must be finite".into()));
        }
        Ok(())
    }

    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        let p = self.parent[joint];
        (p >= 0).then_some(p as usize)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: KinematicTree = serde_json::from_str(text)?;
        if tree.version != TREE_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported kinematic tree version {}",
                tree.version
            )));
        }
        tree.validate()?;
        Ok(tree)
    }
}

/// SMPL-style parameters: shape, per-joint axis-angle pose and a
/// weak-perspective camera `(scale, tx, ty)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub shape: [f64; SHAPE_DIM],
    pub pose: Vec<[f64; 3]>,
    pub camera: [f64; 3],
}

/// Default camera: unit scale with the pelvis slightly above image center.
pub const DEFAULT_CAMERA: [f64; 3] = [1.0, 0.0, 0.05];

impl BodyParams {
    pub fn rest(joint_count: usize) -> Self {
        BodyParams {
            shape: [0.0; SHAPE_DIM],
            pose: vec![[0.0; 3]; joint_count],
            camera: DEFAULT_CAMERA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("shape contains non-finite values".into()));
        }
        for (i, w) in self.pose.iter().enumerate() {
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("pose of joint {i} is non-finite")));
            }
            if Vector3::from(*w).norm() >= std::f64::consts::TAU {
                return Err(Error::InvalidInput(format!(
                    "pose of joint {i} is not the normalized representative (|w| >= 2pi)"
                )));
            }
        }
        if self.camera.iter().any(|v| !v.is_finite()) || self.camera[0] <= 0.0 {
            return Err(Error::InvalidInput("camera scale must be positive and finite".into()));
        }
        Ok(())
    }

    /// Flattens to `[shape | pose | camera]` (24-joint layout).
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(SHAPE_DIM + self.pose.len() * 3 + CAMERA_DIM);
        v.extend_from_slice(&self.shape);
        for w in &self.pose {
            v.extend_from_slice(w);
        }
        v.extend_from_slice(&self.camera);
        v
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() < SHAPE_DIM + CAMERA_DIM || (v.len() - SHAPE_DIM - CAMERA_DIM) % 3 != 0 {
            return Err(Error::ShapeMismatch(format!("parameter vector of length {}", v.len())));
        }
        let joints = (v.len() - SHAPE_DIM - CAMERA_DIM) / 3;
        let mut shape = [0.0; SHAPE_DIM];
        shape.copy_from_slice(&v[..SHAPE_DIM]);
        let pose = (0..joints)
            .map(|j| {
                let o = SHAPE_DIM + 3 * j;
                [v[o], v[o + 1], v[o + 2]]
            })
            .collect();
        let c = v.len() - CAMERA_DIM;
        Ok(BodyParams {
            shape,
            pose,
            camera: [v[c], v[c + 1], v[c + 2]],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPositions {
    pub joints: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePoints {
    pub points: Vec<[f64; 3]>,
}

pub fn bone_lengths(tree: &KinematicTree, shape: &[f64; SHAPE_DIM]) -> Result<Vec<f64>> {
    if shape.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("shape contains non-finite values".into()));
    }
    Ok(raw_bone_lengths(tree, shape)
        .into_iter()
        .enumerate()
        .map(|(i, l)| if i == 0 { 0.0 } else { l.max(MIN_BONE_LENGTH) })
        .collect())
}

fn raw_bone_lengths(tree: &KinematicTree, shape: &[f64; SHAPE_DIM]) -> Vec<f64> {
    tree.rest_lengths_base
        .iter()
        .zip(&tree.length_blend)
        .map(|(base, row)| base + row.iter().zip(shape).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// Intermediate quantities of one forward-kinematics evaluation, kept for
/// the backward pass.
#[derive(Clone, Debug)]
pub struct FkCache {
    pub lengths: Vec<f64>,
    clamped: Vec<bool>,
    local: Vec<Matrix3<f64>>,
    pub global: Vec<Matrix3<f64>>,
    pub joints: Vec<Vector3<f64>>,
}

impl FkCache {
    pub fn joint_positions(&self) -> JointPositions {
        JointPositions {
            joints: self.joints.iter().map(|j| [j.x, j.y, j.z]).collect(),
        }
    }
}

fn check_pose_len(tree: &KinematicTree, params: &BodyParams) -> Result<()> {
    if params.pose.len() != tree.joint_count {
        return Err(Error::ShapeMismatch(format!(
            "pose has {} joints, tree has {}",
            params.pose.len(),
            tree.joint_count
        )));
    }
    Ok(())
}

/// Forward kinematics without the axis-angle range check, used on raw
/// regressor outputs during training.
pub fn forward_kinematics_cached(tree: &KinematicTree, params: &BodyParams) -> Result<FkCache> {
    check_pose_len(tree, params)?;
    if params.shape.iter().chain(params.pose.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite body parameters".into()));
    }
    let raw = raw_bone_lengths(tree, &params.shape);
    let n = tree.joint_count;
    let mut lengths = Vec::with_capacity(n);
    let mut clamped = Vec::with_capacity(n);
    for (i, l) in raw.into_iter().enumerate() {
        if i == 0 {
            lengths.push(0.0);
            clamped.push(true);
        } else {
            clamped.push(l < MIN_BONE_LENGTH);
            lengths.push(l.max(MIN_BONE_LENGTH));
        }
    }
    let mut local = Vec::with_capacity(n);
    let mut global: Vec<Matrix3<f64>> = Vec::with_capacity(n);
    let mut joints: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let r = rodrigues(&Vector3::from(params.pose[i]));
        local.push(r);
        match tree.parent_of(i) {
            None => {
                global.push(r);
                joints.push(Vector3::zeros());
            }
            Some(p) => {
                let offset = global[p] * (Vector3::from(tree.rest_directions[i]) * lengths[i]);
                joints.push(joints[p] + offset);
                global.push(global[p] * r);
            }
        }
    }
    Ok(FkCache {
        lengths,
        clamped,
        local,
        global,
        joints,
    })
}

pub fn forward_kinematics(tree: &KinematicTree, params: &BodyParams) -> Result<JointPositions> {
    params.validate()?;
    Ok(forward_kinematics_cached(tree, params)?.joint_positions())
}

/// Gradients of a joint-space loss with respect to shape and pose.
pub struct FkGrad {
    pub shape: [f64; SHAPE_DIM],
    pub pose: Vec<[f64; 3]>,
}

pub fn forward_kinematics_backward(
    tree: &KinematicTree,
    params: &BodyParams,
    cache: &FkCache,
    d_joints: &[[f64; 3]],
) -> FkGrad {
    let n = tree.joint_count;
    // Subtree-accumulated joint gradients: every descendant moves with a bone offset.
    let mut acc: Vec<Vector3<f64>> = d_joints.iter().map(|g| Vector3::from(*g)).collect();
    for i in (1..n).rev() {
        let p = tree.parent[i] as usize;
        let a = acc[i];
        acc[p] += a;
    }

    let mut d_global = vec![Matrix3::<f64>::zeros(); n];
    let mut d_len = vec![0.0; n];
    let mut d_pose = vec![[0.0; 3]; n];
    for k in (0..n).rev() {
        let parent = tree.parent_of(k);
        let d_local = match parent {
            Some(p) => cache.global[p].transpose() * d_global[k],
            None => d_global[k],
        };
        let jac = rodrigues_jacobian(&Vector3::from(params.pose[k]), &cache.local[k]);
        for (a, j) in jac.iter().enumerate() {
            d_pose[k][a] = d_local.component_mul(j).sum();
        }
        if let Some(p) = parent {
            let g = d_global[k] * cache.local[k].transpose();
            d_global[p] += g;
            let dir = Vector3::from(tree.rest_directions[k]);
            let v = dir * cache.lengths[k];
            d_global[p] += acc[k] * v.transpose();
            if !cache.clamped[k] {
                d_len[k] = acc[k].dot(&(cache.global[p] * dir));
            }
        }
    }

    let mut d_shape = [0.0; SHAPE_DIM];
    for (row, dl) in tree.length_blend.iter().zip(&d_len) {
        for (s, b) in d_shape.iter_mut().zip(row) {
            *s += dl * b;
        }
    }
    FkGrad {
        shape: d_shape,
        pose: d_pose,
    }
}

/// Fixed perpendicular frame around a rest direction.
fn perpendicular_basis(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if d.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = d.cross(&helper).normalize();
    let w = d.cross(&u);
    (u, w)
}

/// Five points per joint: a helix of radius [`SURFACE_RADIUS`] around each
/// posed bone, and a ring around the root.
pub fn surface_points(tree: &KinematicTree, params: &BodyParams) -> Result<SurfacePoints> {
    params.validate()?;
    let cache = forward_kinematics_cached(tree, params)?;
    let mut points = Vec::with_capacity(tree.joint_count * SURFACE_SAMPLES_PER_BONE);
    for i in 0..tree.joint_count {
        let d = Vector3::from(tree.rest_directions[i]);
        let (u, w) = perpendicular_basis(&d);
        for (k, f) in SURFACE_FRACTIONS.iter().enumerate() {
            let angle = std::f64::consts::TAU * k as f64 / SURFACE_SAMPLES_PER_BONE as f64;
            let radial = (u * angle.cos() + w * angle.sin()) * SURFACE_RADIUS;
            let p = match tree.parent_of(i) {
                None => cache.joints[0] + cache.global[0] * radial,
                Some(p) => {
                    let along = cache.joints[p] + (cache.joints[i] - cache.joints[p]) * *f;
                    along + cache.global[p] * radial
                }
            };
            points.push([p.x, p.y, p.z]);
        }
    }
    Ok(SurfacePoints { points })
}

/// Sum over bones of the distance between each joint and its parent.
pub fn total_limb_length(joints: &JointPositions, tree: &KinematicTree) -> Result<f64> {
    Ok(bone_vector_lengths(joints, tree)?.iter().sum())
}

/// Per-bone lengths measured from joint positions (root entry is zero).
pub fn bone_vector_lengths(joints: &JointPositions, tree: &KinematicTree) -> Result<Vec<f64>> {
    if joints.joints.len() != tree.joint_count {
        return Err(Error::ShapeMismatch(format!(
            "{} joints for a {}-joint tree",
            joints.joints.len(),
            tree.joint_count
        )));
    }
    Ok((0..tree.joint_count)
        .map(|i| match tree.parent_of(i) {
            None => 0.0,
            Some(p) => (Vector3::from(joints.joints[i]) - Vector3::from(joints.joints[p])).norm(),
        })
        .collect())
}

pub fn project_weak_perspective(joints: &JointPositions, camera: &[f64; 3]) -> Vec<[f64; 2]> {
    let [s, tx, ty] = *camera;
    joints
        .joints
        .iter()
        .map(|j| [s * j[0] + tx, s * j[1] + ty])
        .collect()
}
