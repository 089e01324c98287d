//! Pose and health-indicator evaluation metrics.
//!
//! Joint-space inputs are in meters; joint-space metrics are reported in
//! millimeters. MPJPE aligns roots before measuring, PA-MPJPE instead uses
//! the least-squares similarity transform (proper rotations only).
//!
//! Note that least-squares alignment does not bound the *mean* joint error:
//! a single outlying joint can make PA-MPJPE exceed root-aligned MPJPE. For
//! typical skeleton pairs alignment helps, which is what the test-suite
//! checks on random pairs.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::body_model::{
    bone_vector_lengths, forward_kinematics, surface_points, total_limb_length, BodyParams,
    JointPositions, KinematicTree,
};
use crate::error::{Error, Result};

const M_TO_MM: f64 = 1000.0;
/// Conversion factor for the pound/inch form of BMI.
pub const IMPERIAL_BMI_FACTOR: f64 = 703.0;

pub fn bmi(weight_kg: f64, height_m: f64) -> Result<f64> {
    check_positive(weight_kg, "weight")?;
    check_positive(height_m, "height")?;
    Ok(weight_kg / (height_m * height_m))
}

pub fn bmi_imperial(weight_lb: f64, height_in: f64) -> Result<f64> {
    check_positive(weight_lb, "weight")?;
    check_positive(height_in, "height")?;
    Ok(weight_lb * IMPERIAL_BMI_FACTOR / (height_in * height_in))
}

fn check_positive(v: f64, what: &str) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidInput(format!("{what} must be positive, got {v}")));
    }
    Ok(())
}

fn check_pair(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted points vs {} ground-truth points",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty point set".into()));
    }
    Ok(())
}

fn mean_distance(pred: &[[f64; 3]], gt: &[[f64; 3]], shift: Vector3<f64>) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (Vector3::from(*p) + shift - Vector3::from(*g)).norm())
        .sum();
    total / pred.len() as f64
}

/// Root-aligned mean per-joint position error (joint 0 is the root).
pub fn mpjpe(pred: &JointPositions, gt: &JointPositions) -> Result<f64> {
    check_pair(&pred.joints, &gt.joints)?;
    let shift = Vector3::from(gt.joints[0]) - Vector3::from(pred.joints[0]);
    Ok(mean_distance(&pred.joints, &gt.joints, shift) * M_TO_MM)
}

/// Mean per-joint position error without any alignment.
pub fn mpjpe_unaligned(pred: &JointPositions, gt: &JointPositions) -> Result<f64> {
    check_pair(&pred.joints, &gt.joints)?;
    Ok(mean_distance(&pred.joints, &gt.joints, Vector3::zeros()) * M_TO_MM)
}

/// Least-squares similarity transform mapping `pred` onto `gt`.
#[derive(Clone, Debug)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let q = self.rotation * Vector3::from(*p) * self.scale + self.translation;
        [q.x, q.y, q.z]
    }
}

pub fn procrustes_transform(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<Similarity> {
    check_pair(pred, gt)?;
    let n = pred.len() as f64;
    let mu_p: Vector3<f64> = pred.iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / n;
    let mu_g: Vector3<f64> = gt.iter().map(|p| Vector3::from(*p)).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let x = Vector3::from(*p) - mu_p;
        let y = Vector3::from(*g) - mu_g;
        cov += y * x.transpose();
        var_p += x.norm_squared();
    }
    let spread = pred
        .iter()
        .map(|p| (Vector3::from(*p) - mu_p).norm())
        .fold(0.0, f64::max);
    if var_p <= 1e-24 || spread <= 1e-12 {
        return Err(Error::Degenerate("predicted points all coincide".into()));
    }
    cov /= n;
    var_p /= n;
    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        // singular values are sorted descending; flip the smallest
        signs[2] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let trace: f64 = svd
        .singular_values
        .iter()
        .zip(signs.iter())
        .map(|(d, s)| d * s)
        .sum();
    let scale = trace / var_p;
    let translation = mu_g - rotation * mu_p * scale;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

pub fn procrustes_align(pred: &JointPositions, gt: &JointPositions) -> Result<JointPositions> {
    let t = procrustes_transform(&pred.joints, &gt.joints)?;
    Ok(JointPositions {
        joints: pred.joints.iter().map(|p| t.apply(p)).collect(),
    })
}

pub fn pa_mpjpe(pred: &JointPositions, gt: &JointPositions) -> Result<f64> {
    let aligned = procrustes_align(pred, gt)?;
    mpjpe_unaligned(&aligned, gt)
}

/// Mean per-vertex error over surface points, in millimeters.
pub fn pve(pred_points: &[[f64; 3]], gt_points: &[[f64; 3]]) -> Result<f64> {
    check_pair(pred_points, gt_points)?;
    Ok(mean_distance(pred_points, gt_points, Vector3::zeros()) * M_TO_MM)
}

/// |total limb length(pred) - total limb length(gt)| for one frame, in mm.
pub fn limblen_error(
    pred: &JointPositions,
    gt: &JointPositions,
    tree: &KinematicTree,
) -> Result<f64> {
    let a = total_limb_length(pred, tree)?;
    let b = total_limb_length(gt, tree)?;
    Ok((a - b).abs() * M_TO_MM)
}

/// Sum over bones of per-bone length differences, in mm.
pub fn limblen_error_per_bone(
    pred: &JointPositions,
    gt: &JointPositions,
    tree: &KinematicTree,
) -> Result<f64> {
    let a = bone_vector_lengths(pred, tree)?;
    let b = bone_vector_lengths(gt, tree)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() * M_TO_MM)
}

/// Per-frame limb-length error averaged over a sequence.
pub fn sequence_limblen_error(
    pred: &[JointPositions],
    gt: &[JointPositions],
    tree: &KinematicTree,
) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        total += limblen_error(p, g, tree)?;
    }
    Ok(total / pred.len() as f64)
}

fn check_scalar_pair(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("no predictions".into()));
    }
    Ok(())
}

pub fn mae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_scalar_pair(preds, gts)?;
    Ok(preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).sum::<f64>() / preds.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_scalar_pair(preds, gts)?;
    if let Some(g) = gts.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::InvalidInput(format!("MAPE needs positive targets, got {g}")));
    }
    Ok(preds
        .iter()
        .zip(gts)
        .map(|(p, g)| (p - g).abs() / g)
        .sum::<f64>()
        / preds.len() as f64
        * 100.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub mpjpe_mm: f64,
    pub limblen_error_mm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pve: f64,
    pub limblen_error: f64,
    pub limblen_error_per_bone: f64,
    pub frames: Vec<FrameMetrics>,
}

impl SequenceMetrics {
    /// Evaluates predicted parameters against ground truth frame by frame.
    pub fn evaluate(
        tree: &KinematicTree,
        pred: &[BodyParams],
        gt: &[BodyParams],
    ) -> Result<Self> {
        if pred.len() != gt.len() || pred.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} predicted frames vs {} ground-truth frames",
                pred.len(),
                gt.len()
            )));
        }
        let mut out = SequenceMetrics::default();
        for (t, (p, g)) in pred.iter().zip(gt).enumerate() {
            let pj = forward_kinematics(tree, p)?;
            let gj = forward_kinematics(tree, g)?;
            let frame_mpjpe = mpjpe(&pj, &gj)?;
            let frame_limb = limblen_error(&pj, &gj, tree)?;
            out.mpjpe += frame_mpjpe;
            out.pa_mpjpe += pa_mpjpe(&pj, &gj)?;
            out.pve += pve(&surface_points(tree, p)?.points, &surface_points(tree, g)?.points)?;
            out.limblen_error += frame_limb;
            out.limblen_error_per_bone += limblen_error_per_bone(&pj, &gj, tree)?;
            out.frames.push(FrameMetrics {
                frame: t,
                mpjpe_mm: frame_mpjpe,
                limblen_error_mm: frame_limb,
            });
        }
        let n = pred.len() as f64;
        out.mpjpe /= n;
        out.pa_mpjpe /= n;
        out.pve /= n;
        out.limblen_error /= n;
        out.limblen_error_per_bone /= n;
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub pve: f64,
    pub limblen_error: f64,
    pub limblen_error_per_bone: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndicatorError {
    pub mae: f64,
    /// Percent.
    pub mape: f64,
}

impl IndicatorError {
    pub fn compute(preds: &[f64], gts: &[f64]) -> Result<Self> {
        Ok(IndicatorError {
            mae: mae(preds, gts)?,
            mape: mape(preds, gts)?,
        })
    }
}

impl std::fmt::Display for IndicatorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} / {:.2}%", self.mae, self.mape)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_sequence: BTreeMap<String, SequenceMetrics>,
    pub aggregate: AggregateMetrics,
    /// Keyed by indicator name: `bmi`, `age`, `height`, `weight`.
    pub indicator_errors: BTreeMap<String, IndicatorError>,
}

impl MetricReport {
    pub fn from_sequences(per_sequence: BTreeMap<String, SequenceMetrics>) -> Self {
        let mut agg = AggregateMetrics::default();
        let n = per_sequence.len();
        if n > 0 {
            for s in per_sequence.values() {
                agg.mpjpe += s.mpjpe;
                agg.pa_mpjpe += s.pa_mpjpe;
                agg.pve += s.pve;
                agg.limblen_error += s.limblen_error;
                agg.limblen_error_per_bone += s.limblen_error_per_bone;
            }
            let n = n as f64;
            agg.mpjpe /= n;
            agg.pa_mpjpe /= n;
            agg.pve /= n;
            agg.limblen_error /= n;
            agg.limblen_error_per_bone /= n;
        }
        MetricReport {
            per_sequence,
            aggregate: agg,
            indicator_errors: BTreeMap::new(),
        }
    }

    pub fn total_frames(&self) -> usize {
        self.per_sequence.values().map(|s| s.frames.len()).sum()
    }

    /// Time series of one sequence as CSV: `frame,mpjpe_mm,limblen_error_mm`.
    pub fn write_sequence_csv<W: Write>(&self, sequence_id: &str, out: W) -> Result<()> {
        let seq = self.per_sequence.get(sequence_id).ok_or_else(|| {
            Error::InvalidInput(format!("no sequence {sequence_id} in report"))
        })?;
        let mut w = csv::Writer::from_writer(out);
        for f in &seq.frames {
            w.serialize(f).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Time series of every sequence as CSV with a leading `sequence_id` column.
    pub fn write_timeseries_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sequence_id", "frame", "mpjpe_mm", "limblen_error_mm"])
            .map_err(csv_err)?;
        for (id, seq) in &self.per_sequence {
            for f in &seq.frames {
                w.write_record([
                    id.clone(),
                    f.frame.to_string(),
                    f.mpjpe_mm.to_string(),
                    f.limblen_error_mm.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{rotation::rodrigues, JOINT_COUNT};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joints(rng: &mut ChaCha8Rng, n: usize) -> JointPositions {
        JointPositions {
            joints: (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
        }
    }

    fn similarity(j: &JointPositions, s: f64, w: [f64; 3], t: [f64; 3]) -> JointPositions {
        let r = rodrigues(&Vector3::from(w));
        JointPositions {
            joints: j
                .joints
                .iter()
                .map(|p| {
                    let q = r * Vector3::from(*p) * s + Vector3::from(t);
                    [q.x, q.y, q.z]
                })
                .collect(),
        }
    }

    #[test]
    fn bmi_examples() {
        assert_eq!(bmi(1.0, 1.0).unwrap(), 1.0);
        let cohort = bmi(64.87, 1.6884).unwrap();
        assert!((cohort - 22.76).abs() < 0.005);
        assert!((cohort - 22.71).abs() < 0.5);
        let metric = bmi(70.0, 1.75).unwrap();
        let imperial = bmi_imperial(154.324, 68.898).unwrap();
        assert!((metric - imperial).abs() / metric < 0.005);
        assert!(bmi(0.0, 1.7).is_err());
        assert!(bmi(70.0, -1.0).is_err());
    }

    #[test]
    fn mpjpe_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_joints(&mut rng, JOINT_COUNT);
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);

        // (3, 0, 4) mm residual on every joint, no alignment involved.
        let shifted = JointPositions {
            joints: gt.joints.iter().map(|p| [p[0] + 0.003, p[1], p[2] + 0.004]).collect(),
        };
        assert_relative_eq!(mpjpe_unaligned(&shifted, &gt).unwrap(), 5.0, epsilon = 1e-9);
        // Root alignment removes a uniform shift.
        assert!(mpjpe(&shifted, &gt).unwrap() < 1e-9);
        // Roots at zero, every other joint off by (3, 0, 4) mm.
        let mut zero_root = gt.clone();
        zero_root.joints[0] = [0.0; 3];
        let mut moved = shifted.clone();
        moved.joints[0] = [0.0; 3];
        assert_relative_eq!(
            mpjpe(&moved, &zero_root).unwrap(),
            5.0 * 23.0 / 24.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn mpjpe_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_joints(&mut rng, JOINT_COUNT);
        let b = random_joints(&mut rng, JOINT_COUNT);
        let mut total = 0.0;
        for i in 0..JOINT_COUNT {
            let mut sq = 0.0;
            for k in 0..3 {
                let d = (a.joints[i][k] - a.joints[0][k]) - (b.joints[i][k] - b.joints[0][k]);
                sq += d * d;
            }
            total += sq.sqrt();
        }
        assert_relative_eq!(mpjpe(&a, &b).unwrap(), total / 24.0 * 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn procrustes_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_joints(&mut rng, JOINT_COUNT);
        let b = similarity(&a, 1.7, [0.3, -2.0, 1.1], [0.5, -0.2, 3.0]);
        let aligned = procrustes_align(&a, &b).unwrap();
        for (p, q) in aligned.joints.iter().zip(&b.joints) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-9);
            }
        }
        assert!(pa_mpjpe(&a, &b).unwrap() < 1e-9);
    }

    #[test]
    fn procrustes_keeps_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_joints(&mut rng, JOINT_COUNT);
        let mirrored = JointPositions {
            joints: a.joints.iter().map(|p| [-p[0], p[1], p[2]]).collect(),
        };
        let t = procrustes_transform(&a.joints, &mirrored.joints).unwrap();
        assert_relative_eq!(t.rotation.determinant(), 1.0, epsilon = 1e-9);
        assert!(pa_mpjpe(&a, &mirrored).unwrap() > 1.0);
    }

    #[test]
    fn procrustes_beats_random_similarities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_joints(&mut rng, JOINT_COUNT);
        let b = random_joints(&mut rng, JOINT_COUNT);
        let sse = |p: &JointPositions| -> f64 {
            p.joints
                .iter()
                .zip(&b.joints)
                .map(|(x, y)| (Vector3::from(*x) - Vector3::from(*y)).norm_squared())
                .sum()
        };
        let best = sse(&procrustes_align(&a, &b).unwrap());
        for _ in 0..1000 {
            let w = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let s = rng.random_range(0.1..3.0);
            assert!(best <= sse(&similarity(&a, s, w, t)) + 1e-12);
        }
    }

    #[test]
    fn three_point_case_is_solved_in_closed_form() {
        // pred: collinear points on x. gt: endpoints stretched to +-a, middle
        // point lifted by d. Cross-covariance is diag(2a/3, 0, 0), so R = I,
        // s = a and t = (0, d/3, 0). Residuals: d/3, d/3, 2d/3.
        let (a, d) = (1.5, 0.3);
        let pred = JointPositions {
            joints: vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        };
        let gt = JointPositions {
            joints: vec![[-a, 0.0, 0.0], [a, 0.0, 0.0], [0.0, d, 0.0]],
        };
        let t = procrustes_transform(&pred.joints, &gt.joints).unwrap();
        assert_relative_eq!(t.scale, a, epsilon = 1e-12);
        assert_relative_eq!(pa_mpjpe(&pred, &gt).unwrap(), 4.0 * d / 9.0 * 1000.0, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_points_rejected() {
        let p = JointPositions {
            joints: vec![[1.0, 2.0, 3.0]; 5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_joints(&mut rng, 5);
        assert!(matches!(procrustes_align(&p, &g), Err(Error::Degenerate(_))));
    }

    #[test]
    fn single_outlier_can_make_alignment_worse() {
        // Least squares spreads one large residual over every joint.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = random_joints(&mut rng, JOINT_COUNT);
        let mut pred = gt.clone();
        pred.joints[10][0] += 1.0;
        assert!(pa_mpjpe(&pred, &gt).unwrap() > mpjpe(&pred, &gt).unwrap());
    }

    #[test]
    fn pve_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_joints(&mut rng, 120);
        assert_eq!(pve(&a.joints, &a.joints).unwrap(), 0.0);
        let b: Vec<[f64; 3]> = a.joints.iter().map(|p| [p[0], p[1] + 0.001, p[2]]).collect();
        assert_relative_eq!(pve(&b, &a.joints).unwrap(), 1.0, epsilon = 1e-9);
        let c = random_joints(&mut rng, 120);
        let oracle: f64 = a
            .joints
            .iter()
            .zip(&c.joints)
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
            .sum::<f64>()
            / 120.0
            * 1000.0;
        assert_relative_eq!(pve(&a.joints, &c.joints).unwrap(), oracle, epsilon = 1e-9);
    }

    #[test]
    fn limblen_examples() {
        let tree = KinematicTree::smpl_lite();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = random_joints(&mut rng, JOINT_COUNT);
        assert_eq!(limblen_error(&gt, &gt, &tree).unwrap(), 0.0);
        let total = total_limb_length(&gt, &tree).unwrap();
        let doubled = JointPositions {
            joints: gt.joints.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect(),
        };
        assert_relative_eq!(limblen_error(&doubled, &gt, &tree).unwrap(), total * 1000.0, epsilon = 1e-9);

        let pred = random_joints(&mut rng, JOINT_COUNT);
        let edge_sum = |j: &JointPositions| -> f64 {
            let mut s = 0.0;
            for i in 1..JOINT_COUNT {
                let p = tree.parent[i] as usize;
                let d: f64 = (0..3).map(|k| (j.joints[i][k] - j.joints[p][k]).powi(2)).sum();
                s += d.sqrt();
            }
            s
        };
        let oracle = (edge_sum(&pred) - edge_sum(&gt)).abs() * 1000.0;
        assert_relative_eq!(limblen_error(&pred, &gt, &tree).unwrap(), oracle, epsilon = 1e-9);
    }

    #[test]
    fn mae_mape_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(mae(&[110.0], &[100.0]).unwrap(), 10.0);
        assert_relative_eq!(mape(&[110.0], &[100.0]).unwrap(), 10.0, epsilon = 1e-12);
        assert!(mape(&[1.0], &[0.0]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        let e = IndicatorError {
            mae: 2.29,
            mape: 9.86,
        };
        assert_eq!(e.to_string(), "2.29 / 9.86%");
    }

    #[test]
    fn aggregate_is_mean_of_sequences() {
        let mut per = BTreeMap::new();
        for (i, v) in [10.0, 20.0, 45.0].iter().enumerate() {
            per.insert(
                format!("s{i}"),
                SequenceMetrics {
                    mpjpe: *v,
                    pa_mpjpe: v / 2.0,
                    pve: v * 1.5,
                    limblen_error: v / 4.0,
                    limblen_error_per_bone: *v,
                    frames: vec![FrameMetrics::default(); 3],
                },
            );
        }
        let r = MetricReport::from_sequences(per);
        assert_relative_eq!(r.aggregate.mpjpe, 25.0, epsilon = 1e-9);
        assert_relative_eq!(r.aggregate.pa_mpjpe, 12.5, epsilon = 1e-9);
        assert_eq!(r.total_frames(), 9);
        let mut buf = Vec::new();
        r.write_timeseries_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
        let mut buf = Vec::new();
        r.write_sequence_csv("s1", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "frame,mpjpe_mm,limblen_error_mm");
    }
}
