//! Axis-angle rotations (Rodrigues) and their derivatives.

use nalgebra::{Matrix3, Vector3};

/// Below this angle the first-order expansion `I + [w]x` is used.
pub const SMALL_ANGLE: f64 = 1e-8;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + k * a + k * k * b
}

/// Partial derivatives `dR/dw_i` for i = 0..3.
///
/// Uses the closed form `dR/dw_i = (w_i [w]x + [w x (I - R) e_i]x) R / |w|^2`,
/// falling back to `[e_i]x` near the identity.
pub fn rodrigues_jacobian(w: &Vector3<f64>, r: &Matrix3<f64>) -> [Matrix3<f64>; 3] {
    let theta2 = w.norm_squared();
    let basis = [Vector3::x(), Vector3::y(), Vector3::z()];
    if theta2.sqrt() < SMALL_ANGLE {
        return basis.map(|e| skew(&e));
    }
    let k = skew(w);
    let i_minus_r = Matrix3::identity() - r;
    let mut out = [Matrix3::zeros(); 3];
    for (i, e) in basis.iter().enumerate() {
        let v = w.cross(&(i_minus_r * e));
        out[i] = (k * w[i] + skew(&v)) * r / theta2;
    }
    out
}

/// Reduces an axis-angle vector to the representative with magnitude in [0, 2pi).
pub fn normalize_axis_angle(w: [f64; 3]) -> [f64; 3] {
    let v = Vector3::from(w);
    let theta = v.norm();
    let two_pi = std::f64::consts::TAU;
    if theta < two_pi {
        return w;
    }
    let reduced = theta.rem_euclid(two_pi);
    let s = reduced / theta;
    [w[0] * s, w[1] * s, w[2] * s]
}
