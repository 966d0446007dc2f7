//! Rotation algebra, target-representation codecs and arm forward kinematics.
//!
//! Body frame: Y up, Z forward, X along the right arm in T-pose. The shoulder
//! is the origin of every position. The left arm points along -X in T-pose,
//! so a bone at rest is [`BONE`].
//!
//! Quaternions are Hamilton, scalar-first.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Direction of a left-arm bone in T-pose.
pub const BONE: Vec3 = Vec3 { x: -1.0, y: 0.0, z: 0.0 };

/// Minimum column magnitude accepted by [`SixD::decode`].
pub const EPS_DEC: f64 = 1e-8;

const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotError {
    #[error("invalid quaternion: {0}")]
    InvalidQuaternion(String),
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("degenerate 6d rotation: {0}")]
    Degenerate6d(String),
    #[error("invalid direction: {0}")]
    InvalidDirection(String),
    #[error("invalid anthropometry: {0}")]
    InvalidAnthropometry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn normalized(self) -> Vec3 {
        self / self.norm()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl fmt::Display for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.w, self.x, self.y, self.z)
    }
}

impl From<[f64; 4]> for Quaternion {
    fn from(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        q.to_array()
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle * 0.5).sin_cos();
        let a = axis / n;
        Quaternion::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn from_rotation_vector(v: Vec3) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    /// Logarithm map: the rotation vector of the shortest rotation equal to `self`.
    pub fn to_rotation_vector(self) -> Vec3 {
        let q = if self.w < 0.0 { -self } else { self };
        let v = Vec3::new(q.x, q.y, q.z);
        let s = v.norm();
        if s < 1e-15 {
            return v * 2.0;
        }
        let angle = 2.0 * s.atan2(q.w);
        v * (angle / s)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(self, o: Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    pub fn conjugate(self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(self, s: f64) -> Quaternion {
        Quaternion::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn normalize(self) -> Result<Quaternion, RotError> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(RotError::InvalidQuaternion(format!("cannot normalize {self}")));
        }
        Ok(self.scale(1.0 / n))
    }

    /// Conjugate divided by the squared norm.
    pub fn inverse(self) -> Result<Quaternion, RotError> {
        let n2 = self.dot(self);
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(RotError::InvalidQuaternion(format!("cannot invert {self}")));
        }
        Ok(self.conjugate().scale(1.0 / n2))
    }

    /// Representative with non-negative scalar part.
    pub fn canonical(self) -> Quaternion {
        if self.w < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Geodesic angle in radians between the rotations of two unit quaternions.
    pub fn angle_to(self, o: Quaternion) -> f64 {
        let d = self.dot(o).abs().min(1.0);
        2.0 * d.acos()
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        rotate_vec(self, v)
    }

    pub fn to_matrix(self) -> RotationMatrix {
        quat_to_matrix(self)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, b: Quaternion) -> Quaternion {
        quat_mul(self, b)
    }
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: Quaternion, b: Quaternion) -> Quaternion {
    Quaternion::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

pub fn quat_inv(q: Quaternion) -> Result<Quaternion, RotError> {
    q.inverse()
}

/// Rotates `v` by `q`. Non-unit quaternions are normalized first.
pub fn rotate_vec(q: Quaternion, v: Vec3) -> Vec3 {
    let n = q.norm();
    let q = if (n - 1.0).abs() > 1e-6 {
        log::debug!("rotate_vec: non-unit quaternion {q} (norm {n}), normalizing");
        q.scale(1.0 / n)
    } else {
        q
    };
    let u = Vec3::new(q.x, q.y, q.z);
    let t = u.cross(v) * 2.0;
    v + t * q.w + u.cross(t)
}

/// 3x3 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix =
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        RotationMatrix([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn frobenius_distance(&self, o: &RotationMatrix) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.0[i][j] - o.0[i][j];
                s += d * d;
            }
        }
        s.sqrt()
    }

    /// Largest deviation of `RᵀR` from the identity, and of the determinant from 1.
    pub fn orthonormality_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for a in 0..3 {
            for b in a..3 {
                let target = if a == b { 1.0 } else { 0.0 };
                err = err.max((self.column(a).dot(self.column(b)) - target).abs());
            }
        }
        err.max((self.determinant() - 1.0).abs())
    }

    pub fn to_quat(&self) -> Result<Quaternion, RotError> {
        matrix_to_quat(self)
    }
}

pub fn quat_to_matrix(q: Quaternion) -> RotationMatrix {
    let Quaternion { w, x, y, z } = q;
    RotationMatrix([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

/// Shepperd's method. Returns the representative with `w >= 0`.
pub fn matrix_to_quat(r: &RotationMatrix) -> Result<Quaternion, RotError> {
    let err = r.orthonormality_error();
    if !(err <= ORTHONORMAL_TOL) {
        return Err(RotError::InvalidRotation(format!(
            "orthonormality error {err:e} exceeds {ORTHONORMAL_TOL:e}"
        )));
    }
    let m = &r.0;
    let trace = m[0][0] + m[1][1] + m[2][2];
    let q = if trace >= m[0][0] && trace >= m[1][1] && trace >= m[2][2] {
        let s = 2.0 * (1.0 + trace).sqrt();
        Quaternion::new(
            0.25 * s,
            (m[2][1] - m[1][2]) / s,
            (m[0][2] - m[2][0]) / s,
            (m[1][0] - m[0][1]) / s,
        )
    } else if m[0][0] >= m[1][1] && m[0][0] >= m[2][2] {
        let s = 2.0 * (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt();
        Quaternion::new(
            (m[2][1] - m[1][2]) / s,
            0.25 * s,
            (m[0][1] + m[1][0]) / s,
            (m[0][2] + m[2][0]) / s,
        )
    } else if m[1][1] >= m[2][2] {
        let s = 2.0 * (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt();
        Quaternion::new(
            (m[0][2] - m[2][0]) / s,
            (m[0][1] + m[1][0]) / s,
            0.25 * s,
            (m[1][2] + m[2][1]) / s,
        )
    } else {
        let s = 2.0 * (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt();
        Quaternion::new(
            (m[1][0] - m[0][1]) / s,
            (m[0][2] + m[2][0]) / s,
            (m[1][2] + m[2][1]) / s,
            0.25 * s,
        )
    };
    Ok(q.normalize()?.canonical())
}

/// Continuous 6D rotation representation: the first two matrix columns stacked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixD(pub [f64; 6]);

impl SixD {
    pub fn encode(r: &RotationMatrix) -> SixD {
        sixd_encode(r)
    }

    pub fn decode(&self) -> Result<RotationMatrix, RotError> {
        sixd_decode(self)
    }

    pub fn a1(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn a2(&self) -> Vec3 {
        Vec3::new(self.0[3], self.0[4], self.0[5])
    }
}

pub fn sixd_encode(r: &RotationMatrix) -> SixD {
    let (a1, a2) = (r.column(0), r.column(1));
    SixD([a1.x, a1.y, a1.z, a2.x, a2.y, a2.z])
}

/// Gram-Schmidt recovery: `b1 = N(a1)`, `b2 = N(a2 - (b1·a2) b1)`, `b3 = b1 × b2`.
pub fn sixd_decode(d: &SixD) -> Result<RotationMatrix, RotError> {
    let (a1, a2) = (d.a1(), d.a2());
    if !a1.is_finite() || !a2.is_finite() {
        return Err(RotError::Degenerate6d("non-finite input".into()));
    }
    let n1 = a1.norm();
    if !(n1 > EPS_DEC) {
        return Err(RotError::Degenerate6d(format!("|a1| = {n1:e}")));
    }
    let b1 = a1 / n1;
    let resid = a2 - b1 * b1.dot(a2);
    let n2 = resid.norm();
    if !(n2 > EPS_DEC) {
        return Err(RotError::Degenerate6d(format!("a2 parallel to a1 (residual {n2:e})")));
    }
    let b2 = resid / n2;
    let b3 = b1.cross(b2);
    Ok(RotationMatrix::from_columns(b1, b2, b3))
}

/// Direction as two angles: azimuth about +Y measured from +Z, elevation toward +Y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarDir {
    pub azimuth: f64,
    pub elevation: f64,
}

pub fn polar_encode(v: Vec3) -> Result<PolarDir, RotError> {
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(RotError::InvalidDirection(format!("{v:?}")));
    }
    let v = v / n;
    let horiz = v.x.hypot(v.z);
    let elevation = v.y.atan2(horiz);
    let mut azimuth = if horiz == 0.0 { 0.0 } else { v.x.atan2(v.z) };
    if azimuth <= -PI {
        azimuth = PI;
    }
    Ok(PolarDir { azimuth, elevation })
}

pub fn polar_decode(p: PolarDir) -> Vec3 {
    let (se, ce) = p.elevation.sin_cos();
    let (sa, ca) = p.azimuth.sin_cos();
    Vec3::new(ce * sa, se, ce * ca)
}

/// Uniformly distributed unit quaternion (normalized 4D Gaussian).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Quaternion {
    loop {
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Ok(u) = q.normalize() {
            if q.norm() > 1e-6 {
                return u;
            }
        }
    }
}

/// Elbow and wrist positions relative to the shoulder.
pub fn forward_kinematics(
    q_u: Quaternion,
    q_l: Quaternion,
    l_u: f64,
    l_l: f64,
) -> Result<(Vec3, Vec3), RotError> {
    if !(l_u > 0.0) || !(l_l > 0.0) || !l_u.is_finite() || !l_l.is_finite() {
        return Err(RotError::InvalidAnthropometry(format!("l_u={l_u}, l_l={l_l}")));
    }
    let p_e = rotate_vec(q_u, BONE).normalized() * l_u;
    let p_w = p_e + rotate_vec(q_l, BONE).normalized() * l_l;
    Ok((p_e, p_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close_q(a: Quaternion, b: Quaternion, tol: f64) -> bool {
        a.to_array().iter().zip(b.to_array()).all(|(x, y)| (x - y).abs() < tol)
    }

    fn close_v(a: Vec3, b: Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn hamilton_product_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_rotation(&mut rng);
        assert_eq!(Quaternion::IDENTITY * q, q);
        assert!(close_q(q * q.inverse().unwrap(), Quaternion::IDENTITY, 1e-12));
        let i = Quaternion::new(0.0, 1.0, 0.0, 0.0);
        let j = Quaternion::new(0.0, 0.0, 1.0, 0.0);
        assert_eq!(i * j, Quaternion::new(0.0, 0.0, 0.0, 1.0));
        for _ in 0..100 {
            let a = random_rotation(&mut rng).scale(rng.random_range(0.1..3.0));
            let b = random_rotation(&mut rng).scale(rng.random_range(0.1..3.0));
            assert!(((a * b).norm() - a.norm() * b.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_cases() {
        assert_eq!(Quaternion::IDENTITY.inverse().unwrap(), Quaternion::IDENTITY);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_rotation(&mut rng);
        assert!(close_q(q.inverse().unwrap(), q.conjugate(), 1e-15));
        assert_eq!(
            Quaternion::new(2.0, 0.0, 0.0, 0.0).inverse().unwrap(),
            Quaternion::new(0.5, 0.0, 0.0, 0.0)
        );
        assert!(matches!(
            Quaternion::new(0.0, 0.0, 0.0, 0.0).inverse(),
            Err(RotError::InvalidQuaternion(_))
        ));
    }

    #[test]
    fn rotate_vec_cases() {
        let x = Vec3::new(1.0, 0.0, 0.0);
        assert_eq!(rotate_vec(Quaternion::IDENTITY, x), x);
        let half_y = Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), PI);
        assert!(close_v(rotate_vec(half_y, x), Vec3::new(-1.0, 0.0, 0.0), 1e-15));
        let qz = Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), PI / 2.0);
        let via_matrix = quat_to_matrix(qz).mul_vec(x);
        assert!(close_v(rotate_vec(qz, x), via_matrix, 1e-15));
        assert!(close_v(via_matrix, Vec3::new(0.0, 1.0, 0.0), 1e-15));
        // Non-unit input is normalized.
        assert!(close_v(rotate_vec(qz.scale(3.0), x), via_matrix, 1e-15));
    }

    #[test]
    fn rotate_vec_matches_matrix_path_and_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = random_rotation(&mut rng);
            let v = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let r = rotate_vec(q, v);
            assert!((r.norm() - v.norm()).abs() < 1e-9);
            assert!(close_v(r, quat_to_matrix(q).mul_vec(v), 1e-12));
        }
    }

    #[test]
    fn matrix_quat_round_trip() {
        assert_eq!(quat_to_matrix(Quaternion::IDENTITY), RotationMatrix::IDENTITY);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let q = random_rotation(&mut rng);
            let back = matrix_to_quat(&quat_to_matrix(q)).unwrap();
            assert!(back.w >= 0.0);
            assert!(close_q(back, q.canonical(), 1e-9), "{q} -> {back}");
        }
    }

    #[test]
    fn shepperd_branches_on_half_turns() {
        let axes = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
        for axis in axes {
            let q = Quaternion::from_axis_angle(axis, PI);
            let m = quat_to_matrix(q);
            let trace = m.0[0][0] + m.0[1][1] + m.0[2][2];
            assert!(trace < 0.0);
            let back = matrix_to_quat(&m).unwrap();
            // Half turn about a unit axis: (0, axis).
            let expect = Quaternion::new(0.0, axis.x, axis.y, axis.z);
            assert!(close_q(back, expect, 1e-12) || close_q(back, -expect, 1e-12));
        }
    }

    #[test]
    fn matrix_to_quat_rejects_non_orthonormal() {
        let mut m = RotationMatrix::IDENTITY;
        m.0[0][0] = 2.0;
        assert!(matches!(matrix_to_quat(&m), Err(RotError::InvalidRotation(_))));
        let reflect = RotationMatrix([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matrix_to_quat(&reflect).is_err());
    }

    #[test]
    fn sixd_encode_cases() {
        assert_eq!(sixd_encode(&RotationMatrix::IDENTITY).0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        // 90 degrees about Z: columns (0,1,0), (-1,0,0), (0,0,1).
        let r = RotationMatrix([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(sixd_encode(&r).0, [0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
        let qz = Quaternion::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), PI / 2.0);
        let enc = sixd_encode(&quat_to_matrix(qz)).0;
        for (a, b) in enc.iter().zip([0.0, 1.0, 0.0, -1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sixd_decode_cases() {
        assert_eq!(sixd_decode(&SixD([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap(), RotationMatrix::IDENTITY);
        assert_eq!(sixd_decode(&SixD([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap(), RotationMatrix::IDENTITY);
        assert_eq!(sixd_decode(&SixD([1.0, 0.0, 0.0, 1.0, 1.0, 0.0])).unwrap(), RotationMatrix::IDENTITY);
        assert!(matches!(
            sixd_decode(&SixD([0.0; 6])),
            Err(RotError::Degenerate6d(_))
        ));
        assert!(sixd_decode(&SixD([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])).is_err());
        assert!(sixd_decode(&SixD([1e-9, 0.0, 0.0, 0.0, 1.0, 0.0])).is_err());
        assert!(sixd_decode(&SixD([f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn sixd_round_trip_and_so3() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let r = quat_to_matrix(random_rotation(&mut rng));
            let back = sixd_decode(&sixd_encode(&r)).unwrap();
            assert!(back.frobenius_distance(&r) < 1e-9);
            let raw = SixD(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            let m = sixd_decode(&raw).unwrap();
            assert!(m.orthonormality_error() < 1e-9);
            let k = rng.random_range(0.01..100.0);
            let scaled = SixD([raw.0[0] * k, raw.0[1] * k, raw.0[2] * k, raw.0[3], raw.0[4], raw.0[5]]);
            assert!(sixd_decode(&scaled).unwrap().frobenius_distance(&m) < 1e-9);
        }
    }

    #[test]
    fn polar_cases() {
        let p = polar_encode(Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.azimuth, p.elevation), (0.0, 0.0));
        let p = polar_encode(Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert_eq!((p.azimuth, p.elevation), (0.0, PI / 2.0));
        let p = polar_encode(Vec3::new(-1.0, 0.0, 0.0)).unwrap();
        assert!((p.azimuth + PI / 2.0).abs() < 1e-15);
        let p = polar_encode(Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(p.azimuth, PI);
        let p = polar_encode(Vec3::new(-0.0, 0.0, -1.0)).unwrap();
        assert_eq!(p.azimuth, PI);
        assert!(matches!(polar_encode(Vec3::ZERO), Err(RotError::InvalidDirection(_))));
    }

    #[test]
    fn polar_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let v = rotate_vec(random_rotation(&mut rng), Vec3::new(1.0, 0.0, 0.0));
            let p = polar_encode(v).unwrap();
            assert!(p.azimuth > -PI && p.azimuth <= PI);
            assert!(p.elevation.abs() <= PI / 2.0);
            assert!(close_v(polar_decode(p), v, 1e-9));
        }
    }

    #[test]
    fn forward_kinematics_cases() {
        let (pe, pw) = forward_kinematics(Quaternion::IDENTITY, Quaternion::IDENTITY, 0.30, 0.25).unwrap();
        assert!(close_v(pe, Vec3::new(-0.30, 0.0, 0.0), 1e-15));
        assert!(close_v(pw, Vec3::new(-0.55, 0.0, 0.0), 1e-15));
        let qy = Quaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), PI / 2.0);
        let (_, pw) = forward_kinematics(qy, qy, 0.30, 0.25).unwrap();
        assert!(close_v(pw, Vec3::new(0.0, 0.0, 0.55), 1e-12));
        assert!(forward_kinematics(qy, qy, 0.0, 0.25).is_err());
        assert!(forward_kinematics(qy, qy, 0.3, -1.0).is_err());
    }

    #[test]
    fn forward_kinematics_sphere_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (l_u, l_l) = (rng.random_range(0.1..0.6), rng.random_range(0.1..0.6));
            let (pe, pw) =
                forward_kinematics(random_rotation(&mut rng), random_rotation(&mut rng), l_u, l_l).unwrap();
            assert!((pe.norm() - l_u).abs() < 1e-12);
            assert!(((pw - pe).norm() - l_l).abs() < 1e-12);
        }
    }

    #[test]
    fn sixd_sweep_is_continuous_quaternion_sweep_is_not() {
        let axis = Vec3::new(0.3, -0.5, 0.8);
        let steps = 10_000;
        let mut six_jumps = Vec::with_capacity(steps);
        let mut max_quat_jump: f64 = 0.0;
        let mut prev: Option<(SixD, Quaternion)> = None;
        for k in 0..steps {
            let phi = 2.0 * PI * k as f64 / steps as f64;
            let r = quat_to_matrix(Quaternion::from_axis_angle(axis, phi));
            let s = sixd_encode(&r);
            let q = matrix_to_quat(&r).unwrap();
            if let Some((ps, pq)) = prev {
                let d: f64 = s.0.iter().zip(ps.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                six_jumps.push(d);
                let dq: f64 = q.to_array().iter().zip(pq.to_array()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                max_quat_jump = max_quat_jump.max(dq);
            }
            prev = Some((s, q));
        }
        let mut sorted = six_jumps.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let max = *sorted.last().unwrap();
        assert!(max < 10.0 * median);
        assert!(max_quat_jump > 1.0);
    }
}
