//! Synthetic gait videos with analytic health labels.
//!
//! Label model (all deterministic in the shape vector `beta` and age):
//!
//! * height (cm) = `TEMPLATE_HEIGHT_CM * span(beta) / span(0)`, where `span`
//!   is the vertical extent of the rest-pose chain ankle, knee, hip, spine,
//!   neck, head. Only `beta[0]` changes it, by `STATURE_FRACTION` per unit.
//! * girth proxy `g = 1 + GIRTH_PER_UNIT * mean(beta[1..=3])`.
//! * weight (kg) = `WEIGHT_COEFF * height_cm * g^2`; the template subject
//!   (`beta = 0`) is 168.84 cm and 64.74 kg.
//! * bmi = weight / (height / 100)^2.
//!
//! Subjects are sampled so that height ~ N(168.84, 8.93^2) cm, BMI ~
//! N(22.71, 3.21^2) and age ~ N(21.75, 3.77^2); the weight mean follows as
//! about 64.9 kg. Walking speed and joint-swing amplitude fall with age so
//! the video carries an age signal.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body_model::{
    forward_kinematics, project_weak_perspective, BodyParams, JointPositions, KinematicTree,
    DEFAULT_CAMERA, JOINT_COUNT, JOINT_NAMES, SHAPE_DIM,
};
use crate::error::{Error, Result};
use crate::metrics;

pub const GENERATOR_VERSION: &str = "glance-synth/1";
pub const TEMPLATE_HEIGHT_CM: f64 = 168.84;
pub const TEMPLATE_WEIGHT_KG: f64 = 64.74;
pub const WEIGHT_COEFF: f64 = TEMPLATE_WEIGHT_KG / TEMPLATE_HEIGHT_CM;
pub const GIRTH_PER_UNIT: f64 = 0.15;

pub const AGE_MEAN: f64 = 21.75;
pub const AGE_SD: f64 = 3.77;
pub const HEIGHT_SD: f64 = 8.93;
pub const BMI_MEAN: f64 = 22.71;
pub const BMI_SD: f64 = 3.21;
const BMI_RANGE: (f64, f64) = (13.0, 40.0);
const MIN_AGE: f64 = 5.0;

pub const REFERENCE_SPEED: f64 = 1.3;
const SPEED_PER_YEAR: f64 = 0.02;
const SPEED_NOISE_SD: f64 = 0.05;
const MIN_SPEED: f64 = 0.3;
/// Stride length as a multiple of leg length.
const STRIDE_PER_LEG: f64 = 1.6;
const AMPLITUDE_PER_YEAR: f64 = 0.02;
const AZIMUTH_RANGE: (f64, f64) = (0.8, 1.6);
const ARM_ABDUCTION: f64 = 0.15;

/// Peak joint angles (radians) at the reference speed and mean age.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeTable {
    /// Hip flexion/extension, symmetric about zero.
    pub hip: f64,
    /// Knee flexion, in `[0, knee]`.
    pub knee: f64,
    /// Shoulder swing, symmetric about zero, opposite to the same-side hip.
    pub shoulder: f64,
    /// Elbow flexion, in `[0, elbow]`.
    pub elbow: f64,
    /// Lateral trunk sway at the lower spine, symmetric about zero.
    pub sway: f64,
}

pub const BASE_AMPLITUDES: AmplitudeTable = AmplitudeTable {
    hip: 0.42,
    knee: 0.95,
    shoulder: 0.30,
    elbow: 0.35,
    sway: 0.04,
};

const L_HIP: usize = 1;
const R_HIP: usize = 2;
const SPINE1: usize = 3;
const L_KNEE: usize = 4;
const R_KNEE: usize = 5;
const L_SHOULDER: usize = 16;
const R_SHOULDER: usize = 17;
const L_ELBOW: usize = 18;
const R_ELBOW: usize = 19;

/// Bones whose vertical extent makes up stature.
const STATURE_CHAIN: [usize; 7] = [7, 4, 1, 3, 6, 9, 12];
const HEAD_BONE: usize = 15;
const LEG_CHAIN: [usize; 3] = [7, 4, 1];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthIndicators {
    pub age: f64,
    pub height: f64,
    pub weight: f64,
    pub bmi: f64,
}

impl HealthIndicators {
    pub const NAMES: [&'static str; 4] = ["age", "height", "weight", "bmi"];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "age" => Some(self.age),
            "height" => Some(self.height),
            "weight" => Some(self.weight),
            "bmi" => Some(self.bmi),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub shape: [f64; SHAPE_DIM],
    pub indicators: HealthIndicators,
    /// m/s.
    pub gait_speed: f64,
    /// Strides per second.
    pub cadence: f64,
    /// Yaw of the walker relative to the camera, radians.
    pub camera_azimuth: f64,
    /// Gait phase at frame 0, radians.
    pub phase_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitSequence {
    pub sequence_id: String,
    pub subject_id: String,
    pub fps: f64,
    /// `T x H x W`, values in `[0, 1]`.
    #[serde(skip)]
    pub frames: Array3<f32>,
    pub gt_params: Vec<BodyParams>,
    pub gt_joints: Vec<JointPositions>,
    pub indicators: HealthIndicators,
    pub subject: SubjectSpec,
    /// Frames where some joint projected outside the image.
    pub coverage_warnings: Vec<usize>,
}

impl GaitSequence {
    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn vertical_span(tree: &KinematicTree, lengths: &[f64], bones: &[usize]) -> f64 {
    bones
        .iter()
        .map(|&b| lengths[b] * tree.rest_directions[b][1].abs())
        .sum()
}

fn raw_lengths(tree: &KinematicTree, shape: &[f64; SHAPE_DIM]) -> Vec<f64> {
    (0..tree.joint_count)
        .map(|i| {
            tree.rest_lengths_base[i]
                + tree.length_blend[i]
                    .iter()
                    .zip(shape)
                    .map(|(b, s)| b * s)
                    .sum::<f64>()
        })
        .collect()
}

fn stature_span(tree: &KinematicTree, shape: &[f64; SHAPE_DIM]) -> f64 {
    let mut chain = STATURE_CHAIN.to_vec();
    chain.push(HEAD_BONE);
    vertical_span(tree, &raw_lengths(tree, shape), &chain)
}

/// Standing height in centimeters.
pub fn stature_cm(tree: &KinematicTree, shape: &[f64; SHAPE_DIM]) -> f64 {
    TEMPLATE_HEIGHT_CM * stature_span(tree, shape) / stature_span(tree, &[0.0; SHAPE_DIM])
}

pub fn girth(shape: &[f64; SHAPE_DIM]) -> f64 {
    1.0 + GIRTH_PER_UNIT * (shape[1] + shape[2] + shape[3]) / 3.0
}

/// Leg length (hip to ankle, vertical extent) in meters.
pub fn leg_length(tree: &KinematicTree, shape: &[f64; SHAPE_DIM]) -> f64 {
    vertical_span(tree, &raw_lengths(tree, shape), &LEG_CHAIN)
}

pub fn derive_indicators(shape: &[f64; SHAPE_DIM], age: f64) -> Result<HealthIndicators> {
    if shape.iter().any(|v| !v.is_finite()) || !age.is_finite() {
        return Err(Error::InvalidInput("shape or age is non-finite".into()));
    }
    let tree = KinematicTree::smpl_lite();
    let height = stature_cm(&tree, shape);
    let g = girth(shape);
    let weight = WEIGHT_COEFF * height * g * g;
    if !(height > 0.0 && weight > 0.0 && age > 0.0) {
        return Err(Error::InvalidInput(format!(
            "shape yields non-physical indicators (height {height}, weight {weight}, age {age})"
        )));
    }
    Ok(HealthIndicators {
        age,
        height,
        weight,
        bmi: metrics::bmi(weight, height / 100.0)?,
    })
}

/// Draws a subject; deterministic per seed.
pub fn sample_subject(seed: u64) -> SubjectSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let tree = KinematicTree::smpl_lite();

    let mut shape = [0.0; SHAPE_DIM];
    shape[0] = std_normal.sample(&mut rng);
    let height = stature_cm(&tree, &shape);

    let bmi_dist = Normal::new(BMI_MEAN, BMI_SD).expect("bmi normal");
    let bmi = loop {
        let b = bmi_dist.sample(&mut rng);
        if b >= BMI_RANGE.0 && b <= BMI_RANGE.1 {
            break b;
        }
    };
    let weight = bmi * (height / 100.0).powi(2);
    let g = (weight / (WEIGHT_COEFF * height)).sqrt();
    let girth_mean = (g - 1.0) / GIRTH_PER_UNIT;
    let jitter: Vec<f64> = (0..3).map(|_| 0.3 * std_normal.sample(&mut rng)).collect();
    let jitter_mean = jitter.iter().sum::<f64>() / 3.0;
    for k in 0..3 {
        shape[1 + k] = girth_mean + jitter[k] - jitter_mean;
    }
    for s in shape.iter_mut().skip(4) {
        *s = 0.5 * std_normal.sample(&mut rng);
    }

    let age_dist = Normal::new(AGE_MEAN, AGE_SD).expect("age normal");
    let age = loop {
        let a = age_dist.sample(&mut rng);
        if a > MIN_AGE {
            break a;
        }
    };

    let speed = (REFERENCE_SPEED - SPEED_PER_YEAR * (age - AGE_MEAN)
        + SPEED_NOISE_SD * std_normal.sample(&mut rng))
    .max(MIN_SPEED);
    let cadence = speed / (STRIDE_PER_LEG * leg_length(&tree, &shape));
    let camera_azimuth = rng.random_range(AZIMUTH_RANGE.0..AZIMUTH_RANGE.1);
    let phase_offset = rng.random_range(0.0..TAU);

    let indicators = derive_indicators(&shape, age).expect("sampled shape is finite");
    SubjectSpec {
        shape,
        indicators,
        gait_speed: speed,
        cadence,
        camera_azimuth,
        phase_offset,
    }
}

/// Amplitudes for a subject: the base table scaled by speed and an age factor.
pub fn subject_amplitudes(subject: &SubjectSpec) -> AmplitudeTable {
    let age_factor = (1.0 - AMPLITUDE_PER_YEAR * (subject.indicators.age - AGE_MEAN)).clamp(0.6, 1.3);
    let k = subject.gait_speed.max(0.0) / REFERENCE_SPEED * age_factor;
    AmplitudeTable {
        hip: BASE_AMPLITUDES.hip * k,
        knee: BASE_AMPLITUDES.knee * k,
        shoulder: BASE_AMPLITUDES.shoulder * k,
        elbow: BASE_AMPLITUDES.elbow * k,
        sway: BASE_AMPLITUDES.sway * k,
    }
}

/// Gait period in whole frames, or `None` when the subject stands still.
pub fn period_frames(subject: &SubjectSpec, fps: f64) -> Option<usize> {
    if subject.gait_speed <= 0.0 || subject.cadence <= 0.0 {
        return None;
    }
    Some(((fps / subject.cadence).round() as usize).max(2))
}

/// Joint angles at a gait phase (radians; phase of the left leg).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaitAngles {
    pub hip: [f64; 2],
    pub knee: [f64; 2],
    pub shoulder: [f64; 2],
    pub elbow: [f64; 2],
    pub sway: f64,
}

pub fn gait_angles(a: &AmplitudeTable, phase: f64) -> GaitAngles {
    let sides = [phase, phase + PI];
    GaitAngles {
        hip: sides.map(|p| a.hip * p.sin()),
        knee: sides.map(|p| a.knee * 0.5 * (1.0 - (p - 0.6).cos())),
        shoulder: sides.map(|p| -a.shoulder * p.sin()),
        elbow: sides.map(|p| a.elbow * 0.5 * (1.0 - p.cos())),
        sway: a.sway * phase.sin(),
    }
}

fn pose_from_angles(angles: &GaitAngles, yaw: f64) -> Vec<[f64; 3]> {
    let mut pose = vec![[0.0; 3]; JOINT_COUNT];
    pose[0] = [0.0, yaw, 0.0];
    pose[SPINE1] = [0.0, 0.0, angles.sway];
    // Forward is +z: flexion of a downward bone about x is a negative angle.
    pose[L_HIP] = [-angles.hip[0], 0.0, 0.0];
    pose[R_HIP] = [-angles.hip[1], 0.0, 0.0];
    pose[L_KNEE] = [angles.knee[0], 0.0, 0.0];
    pose[R_KNEE] = [angles.knee[1], 0.0, 0.0];
    pose[L_SHOULDER] = [-angles.shoulder[0], 0.0, ARM_ABDUCTION];
    pose[R_SHOULDER] = [-angles.shoulder[1], 0.0, -ARM_ABDUCTION];
    pose[L_ELBOW] = [-angles.elbow[0], 0.0, 0.0];
    pose[R_ELBOW] = [-angles.elbow[1], 0.0, 0.0];
    pose
}

/// Procedural walk: sinusoidal joint trajectories phase-locked to cadence.
pub fn synthesize_walk(subject: &SubjectSpec, frame_count: usize, fps: f64) -> Result<Vec<BodyParams>> {
    if !(fps > 0.0) {
        return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
    }
    let amps = subject_amplitudes(subject);
    let period = period_frames(subject, fps);
    Ok((0..frame_count)
        .map(|t| {
            let phase = match period {
                Some(p) => subject.phase_offset + TAU * (t % p) as f64 / p as f64,
                None => subject.phase_offset,
            };
            BodyParams {
                shape: subject.shape,
                pose: pose_from_angles(&gait_angles(&amps, phase), subject.camera_azimuth),
                camera: DEFAULT_CAMERA,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Left,
    Right,
    Centre,
}

impl Side {
    fn of(joint: usize) -> Side {
        let name = JOINT_NAMES[joint];
        if name.starts_with("left_") {
            Side::Left
        } else if name.starts_with("right_") {
            Side::Right
        } else {
            Side::Centre
        }
    }

    fn intensity(self) -> f32 {
        match self {
            Side::Left => 1.0,
            Side::Right => 0.6,
            Side::Centre => 0.8,
        }
    }
}

/// Capsule radius (meters, before girth scaling) of the bone ending at `joint`.
fn bone_radius(joint: usize) -> f64 {
    match JOINT_NAMES[joint] {
        "spine1" | "spine2" | "spine3" => 0.07,
        "head" => 0.06,
        "neck" | "left_collar" | "right_collar" | "left_hip" | "right_hip" => 0.04,
        "left_knee" | "right_knee" => 0.055,
        "left_ankle" | "right_ankle" => 0.045,
        "left_elbow" | "right_elbow" => 0.035,
        "left_wrist" | "right_wrist" => 0.03,
        _ => 0.025,
    }
}

/// Image pixels per meter of weak-perspective coordinates.
pub fn pixels_per_meter(height: usize, width: usize) -> f64 {
    0.45 * height.min(width) as f64
}

fn to_pixel(p: [f64; 2], height: usize, width: usize) -> [f64; 2] {
    let s = pixels_per_meter(height, width);
    [width as f64 / 2.0 + s * p[0], height as f64 / 2.0 - s * p[1]]
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Draws one frame; returns whether every joint landed inside the image.
fn render_frame(
    tree: &KinematicTree,
    joints: &JointPositions,
    camera: &[f64; 3],
    girth: f64,
    height: usize,
    width: usize,
    out: &mut [f32],
) -> bool {
    let pts: Vec<[f64; 2]> = project_weak_perspective(joints, camera)
        .into_iter()
        .map(|p| to_pixel(p, height, width))
        .collect();
    let inside = pts
        .iter()
        .all(|p| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < width as f64 && p[1] < height as f64);
    let ppm = pixels_per_meter(height, width) * camera[0];
    for j in 1..tree.joint_count {
        let Some(parent) = tree.parent_of(j) else { continue };
        let (a, b) = (pts[parent], pts[j]);
        let r = bone_radius(j) * girth * ppm;
        let value = Side::of(j).intensity();
        let x0 = (a[0].min(b[0]) - r - 1.0).floor().max(0.0) as usize;
        let y0 = (a[1].min(b[1]) - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + r + 1.0).ceil().max(0.0) as usize).min(width);
        let y1 = ((a[1].max(b[1]) + r + 1.0).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = segment_distance([x as f64 + 0.5, y as f64 + 0.5], a, b);
                let coverage = (r + 0.5 - d).clamp(0.0, 1.0) as f32;
                let px = &mut out[y * width + x];
                *px = px.max(coverage * value);
            }
        }
    }
    inside
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub frames: Array3<f32>,
    pub coverage_warnings: Vec<usize>,
}

/// Rasterizes each pose as anti-aliased capsules (left side brightest,
/// right side dimmest) on a black background.
pub fn render_sequence(params: &[BodyParams], subject: &SubjectSpec, height: usize, width: usize) -> Result<Rendered> {
    render_with_girth(params, girth(&subject.shape), height, width)
}

pub fn render_with_girth(params: &[BodyParams], girth: f64, height: usize, width: usize) -> Result<Rendered> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput("frame size must be positive".into()));
    }
    let tree = KinematicTree::smpl_lite();
    let mut frames = Array3::<f32>::zeros((params.len(), height, width));
    let mut coverage_warnings = Vec::new();
    for (t, p) in params.iter().enumerate() {
        let joints = forward_kinematics(&tree, p)?;
        let mut frame = frames.index_axis_mut(ndarray::Axis(0), t);
        let buf = frame.as_slice_mut().expect("contiguous frame");
        if !render_frame(&tree, &joints, &p.camera, girth, height, width, buf) {
            coverage_warnings.push(t);
        }
    }
    Ok(Rendered {
        frames,
        coverage_warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub sequences_per_subject: usize,
    pub frames: usize,
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 85,
            sequences_per_subject: 1,
            frames: 32,
            fps: 16.0,
            height: 64,
            width: 64,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 16 {
            return Err(Error::Config(format!("sequences need at least 16 frames, got {}", self.frames)));
        }
        if self.sequences_per_subject == 0 || self.height < 8 || self.width < 8 || !(self.fps > 0.0) {
            return Err(Error::Config("invalid synthetic dataset dimensions".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn subject_id(index: usize) -> String {
    format!("s{index:04}")
}

/// One labeled sequence of a subject.
pub fn make_sequence(subject: &SubjectSpec, subject_id: &str, take: usize, config: &SynthConfig) -> Result<GaitSequence> {
    let params = synthesize_walk(subject, config.frames, config.fps)?;
    let tree = KinematicTree::smpl_lite();
    let gt_joints = params
        .iter()
        .map(|p| forward_kinematics(&tree, p))
        .collect::<Result<Vec<_>>>()?;
    let rendered = render_sequence(&params, subject, config.height, config.width)?;
    Ok(GaitSequence {
        sequence_id: format!("{subject_id}_{take:02}"),
        subject_id: subject_id.to_string(),
        fps: config.fps,
        frames: rendered.frames,
        gt_params: params,
        gt_joints,
        indicators: subject.indicators,
        subject: subject.clone(),
        coverage_warnings: rendered.coverage_warnings,
    })
}

/// Generates the whole dataset. Every subject and take derives its own seed
/// from the master seed, so the output does not depend on thread scheduling.
pub fn generate(config: &SynthConfig) -> Result<Vec<GaitSequence>> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..config.subjects)
        .flat_map(|s| (0..config.sequences_per_subject).map(move |k| (s, k)))
        .collect();
    jobs.par_iter()
        .map(|&(s, k)| {
            let mut subject = sample_subject(mix_seed(config.seed, s as u64));
            if k > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(config.seed, s as u64), k as u64));
                subject.phase_offset = rng.random_range(0.0..TAU);
            }
            make_sequence(&subject, &subject_id(s), k, config)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sequence_id: String,
    pub subject_id: String,
    pub frames_file: String,
    pub truth_file: String,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    pub indicators: HealthIndicators,
    pub frames_sha256: String,
    pub truth_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator_version: String,
    pub master_seed: u64,
    pub entries: Vec<ManifestEntry>,
    /// SHA-256 over every entry's id and file digests.
    pub checksum: String,
}

impl Manifest {
    pub fn subject_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.entries.iter().map(|e| e.subject_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct TruthFile {
    sequence_id: String,
    subject_id: String,
    fps: f64,
    gt_params: Vec<BodyParams>,
    gt_joints: Vec<JointPositions>,
    indicators: HealthIndicators,
    subject: SubjectSpec,
    coverage_warnings: Vec<usize>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn combined_checksum(entries: &[ManifestEntry]) -> String {
    let mut h = Sha256::new();
    for e in entries {
        h.update(e.sequence_id.as_bytes());
        h.update(b"\n");
        h.update(e.frames_sha256.as_bytes());
        h.update(b"\n");
        h.update(e.truth_sha256.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Frames as `"T H W\n"` followed by little-endian f32 values in C order.
pub fn encode_frames(frames: &Array3<f32>) -> Vec<u8> {
    let (t, h, w) = frames.dim();
    let mut out = format!("{t} {h} {w}\n").into_bytes();
    out.reserve(t * h * w * 4);
    for v in frames.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_frames(bytes: &[u8], path: &Path) -> Result<Array3<f32>> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format(path, "header is not UTF-8"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, format!("bad header {header:?}")))?;
    let [t, h, w] = dims[..] else {
        return Err(Error::format(path, format!("expected 3 dims, got {header:?}")));
    };
    let body = &bytes[nl + 1..];
    if body.len() != t * h * w * 4 {
        return Err(Error::format(
            path,
            format!("expected {} bytes of data, found {}", t * h * w * 4, body.len()),
        ));
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Array3::from_shape_vec((t, h, w), values).expect("checked length"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_dataset(sequences: &[GaitSequence], dir: &Path, master_seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(sequences.len());
    let mut seen = BTreeMap::new();
    for s in sequences {
        if seen.insert(s.sequence_id.clone(), ()).is_some() {
            return Err(Error::InvalidInput(format!("duplicate sequence id {}", s.sequence_id)));
        }
        let frames_file = format!("{}.bin", s.sequence_id);
        let truth_file = format!("{}.json", s.sequence_id);
        let frame_bytes = encode_frames(&s.frames);
        let truth = TruthFile {
            sequence_id: s.sequence_id.clone(),
            subject_id: s.subject_id.clone(),
            fps: s.fps,
            gt_params: s.gt_params.clone(),
            gt_joints: s.gt_joints.clone(),
            indicators: s.indicators,
            subject: s.subject.clone(),
            coverage_warnings: s.coverage_warnings.clone(),
        };
        let truth_bytes = serde_json::to_vec(&truth)?;
        write_file(&dir.join(&frames_file), &frame_bytes)?;
        write_file(&dir.join(&truth_file), &truth_bytes)?;
        let (t, h, w) = s.frames.dim();
        entries.push(ManifestEntry {
            sequence_id: s.sequence_id.clone(),
            subject_id: s.subject_id.clone(),
            frames_file,
            truth_file,
            frame_count: t,
            height: h,
            width: w,
            fps: s.fps,
            indicators: s.indicators,
            frames_sha256: sha256_hex(&frame_bytes),
            truth_sha256: sha256_hex(&truth_bytes),
        });
    }
    let manifest = Manifest {
        generator_version: GENERATOR_VERSION.to_string(),
        master_seed,
        checksum: combined_checksum(&entries),
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    write_file(&path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingDataset(dir.to_path_buf()));
    }
    let manifest: Manifest =
        serde_json::from_slice(&read_file(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.checksum != combined_checksum(&manifest.entries) {
        return Err(Error::format(&path, "manifest checksum does not match its entries"));
    }
    Ok(manifest)
}

pub fn read_sequence(dir: &Path, entry: &ManifestEntry) -> Result<GaitSequence> {
    let fpath = dir.join(&entry.frames_file);
    let tpath = dir.join(&entry.truth_file);
    let frame_bytes = read_file(&fpath)?;
    if sha256_hex(&frame_bytes) != entry.frames_sha256 {
        return Err(Error::format(&fpath, "checksum mismatch"));
    }
    let truth_bytes = read_file(&tpath)?;
    if sha256_hex(&truth_bytes) != entry.truth_sha256 {
        return Err(Error::format(&tpath, "checksum mismatch"));
    }
    let frames = decode_frames(&frame_bytes, &fpath)?;
    let truth: TruthFile = serde_json::from_slice(&truth_bytes).map_err(|e| Error::format(&tpath, e.to_string()))?;
    Ok(GaitSequence {
        sequence_id: truth.sequence_id,
        subject_id: truth.subject_id,
        fps: truth.fps,
        frames,
        gt_params: truth.gt_params,
        gt_joints: truth.gt_joints,
        indicators: truth.indicators,
        subject: truth.subject,
        coverage_warnings: truth.coverage_warnings,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Vec<GaitSequence>> {
    let manifest = read_manifest(dir)?;
    manifest.entries.iter().map(|e| read_sequence(dir, e)).collect()
}
