//! SO(3)/SE(3) primitives: hat/vee, exponential and logarithm maps, and the
//! [`Pose`] and [`Twist`] value types used throughout the crate.
//!
//! Twists are stored translational part first (`alpha`, metres) followed by
//! the rotational part (`beta`, radians). Every 6-vector in this crate that
//! represents a twist or a pose increment uses that order.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat4 = Matrix4<f64>;

/// Below this rotation angle the exponential and logarithm fall back to
/// second-order series expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Tolerance on the symmetric part accepted by [`vee`].
pub const SKEW_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not skew-symmetric (symmetric part {0:.3e})")]
    NotSkewSymmetric(f64),
}

/// Skew-symmetric matrix such that `hat(v) * a == v.cross(&a)`.
#[inline]
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. The symmetric part of `m` must be below
/// [`SKEW_TOLERANCE`] scaled by `max(1, |m|)`.
pub fn vee(m: &Mat3) -> Result<Vec3, GeometryError> {
    let sym = (m + m.transpose()) * 0.5;
    let asym = sym.amax();
    if asym > SKEW_TOLERANCE * m.amax().max(1.0) {
        return Err(GeometryError::NotSkewSymmetric(asym));
    }
    Ok(vee_unchecked(m))
}

/// Vector of the skew-symmetric part of `m`, without validation.
#[inline]
pub fn vee_unchecked(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Exponential coordinates of a rigid-body motion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    /// Translational part (m).
    pub alpha: Vec3,
    /// Rotational part (rad).
    pub beta: Vec3,
}

impl Twist {
    pub fn new(alpha: Vec3, beta: Vec3) -> Self {
        Self { alpha, beta }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            alpha: Vec3::new(v[0], v[1], v[2]),
            beta: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.alpha.x,
            self.alpha.y,
            self.alpha.z,
            self.beta.x,
            self.beta.y,
            self.beta.z,
        )
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            alpha: self.alpha * s,
            beta: self.beta * s,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.alpha.norm_squared() + self.beta.norm_squared()).sqrt()
    }

    /// 4x4 matrix form `[hat(beta) alpha; 0 0]`.
    pub fn hat(&self) -> Mat4 {
        let b = hat(&self.beta);
        let mut m = Mat4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&b);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.alpha);
        m
    }
}

/// Rigid-body transformation with rotation `R` and translation `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    pub fn from_rotation(r: Mat3) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// Builds a pose from a unit quaternion given scalar-last.
    pub fn from_quaternion(translation: Vec3, q: &UnitQuaternion<f64>) -> Self {
        Self::new(*q.to_rotation_matrix().matrix(), translation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Mat4 {
        let mut m = Mat4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Reads the rotation and translation blocks; the bottom row is ignored.
    pub fn from_matrix(m: &Mat4) -> Self {
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Right-perturbation `self * exp(delta)`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        self.compose(&exp_se3(delta))
    }

    /// Largest deviation of `RᵀR` from identity, and the determinant.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let e = (self.rotation.transpose() * self.rotation - Mat3::identity()).amax();
        (e, self.rotation.determinant())
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Coefficients `(sinθ/θ, (1-cosθ)/θ², (θ-sinθ)/θ³)` shared by the SO(3) and
/// SE(3) exponentials.
#[inline]
fn exp_coefficients(theta_sq: f64) -> (f64, f64, f64) {
    // sinθ/θ, (1-cosθ)/θ², (θ-sinθ)/θ³; the last two cancel badly well
    // above the usual small-angle threshold, so the series covers θ < 1e-2
    if theta_sq < 1e-4 {
        let t2 = theta_sq;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0 - t6 / 5040.0,
            0.5 - t2 / 24.0 + t4 / 720.0 - t6 / 40320.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0 - t6 / 362880.0,
        )
    } else {
        let theta = theta_sq.sqrt();
        let (s, _) = theta.sin_cos();
        let half = (0.5 * theta).sin();
        (s / theta, 2.0 * half * half / theta_sq, (theta - s) / (theta_sq * theta))
    }
}

/// Rodrigues' formula.
pub fn exp_so3(beta: &Vec3) -> Mat3 {
    let (a, b, _) = exp_coefficients(beta.norm_squared());
    let k = hat(beta);
    Mat3::identity() + k * a + k * k * b
}

/// Principal logarithm of a rotation matrix, `|result| <= π`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let skew = vee_unchecked(r); // sinθ · axis
    let sin_theta = skew.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // θ/sinθ ≈ 1 + θ²/6
        return skew * (1.0 + theta * theta / 6.0);
    }
    if cos_theta > -0.99 {
        return skew * (theta / sin_theta);
    }

    // Near θ = π the skew part vanishes; recover the axis from the symmetric
    // part R + Rᵀ = 2cosθ·I + 2(1-cosθ)·aaᵀ and fix its sign from the skew part.
    let sym = (r + r.transpose()) * 0.5;
    let one_minus_cos = 1.0 - cos_theta;
    let outer = (sym - Mat3::identity() * cos_theta) / one_minus_cos;
    let mut k = 0;
    for i in 1..3 {
        if outer[(i, i)] > outer[(k, k)] {
            k = i;
        }
    }
    let mut axis = outer.column(k).into_owned() / outer[(k, k)].max(0.0).sqrt();
    axis.normalize_mut();
    if axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Closed-form SE(3) exponential.
pub fn exp_se3(xi: &Twist) -> Pose {
    let (a, b, c) = exp_coefficients(xi.beta.norm_squared());
    let k = hat(&xi.beta);
    let k2 = k * k;
    let rotation = Mat3::identity() + k * a + k2 * b;
    let v = Mat3::identity() + k * b + k2 * c;
    Pose::new(rotation, v * xi.alpha)
}

/// Principal-branch SE(3) logarithm (`|beta| <= π`).
///
/// At exactly θ = π the rotation axis is only defined up to sign; the branch
/// in [`log_so3`] extracts it from the symmetric part of `R`.
pub fn log_se3(t: &Pose) -> Twist {
    let beta = log_so3(&t.rotation);
    let theta_sq = beta.norm_squared();
    let k = hat(&beta);
    // V⁻¹ = I - ½K + c·K², c = (1 - θ sinθ / (2(1 - cosθ))) / θ²
    let c = if theta_sq < 1e-6 {
        1.0 / 12.0 + theta_sq / 720.0
    } else {
        let theta = theta_sq.sqrt();
        let (s, co) = theta.sin_cos();
        (1.0 - theta * s / (2.0 * (1.0 - co))) / theta_sq
    };
    let v_inv = Mat3::identity() - k * 0.5 + k * k * c;
    Twist::new(v_inv * t.translation, beta)
}

/// Geodesic distance on SO(3): the rotation angle of `aᵀb`, in `[0, π]`.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let r = a.transpose() * b;
    let sin_theta = vee_unchecked(&r).norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    sin_theta.atan2(cos_theta)
}

/// Rotation about the x axis.
pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the y axis.
pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the z axis.
pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}
