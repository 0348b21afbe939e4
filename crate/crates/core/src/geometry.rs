//! Rigid-body geometry on SO(3) and SE(3).
//!
//! Rotations are unit quaternions kept in the `w >= 0` hemisphere. Poses are
//! perturbed on the left, `P <- exp(xi) * P`, and twists are ordered
//! `(omega, v)`: rotational part first, translational part second.

use nalgebra::{Matrix3, Matrix3x6, Quaternion, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

/// A point or free vector in 3D, meters.
pub type Point3 = Vector3<f64>;

/// Below this rotation angle (rad) the closed forms switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Largest rotation angle accepted by [`Pose::log`]; beyond it the axis sign is ambiguous.
pub const LOG_MAX_ANGLE: f64 = std::f64::consts::PI - 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation angle {angle} rad is at the logarithm branch cut (pi)")]
    LogBranchAmbiguity { angle: f64 },
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
}

/// Skew-symmetric matrix `[w]x` with `[w]x * u = w x u`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// A 3D rotation stored as a canonical unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    fn canonical(q: Quaternion<f64>) -> Self {
        let q = if q.w < 0.0 { -q } else { q };
        Rotation(UnitQuaternion::new_normalize(q))
    }

    /// Builds a rotation from quaternion coefficients, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(GeometryError::DegenerateQuaternion);
        }
        // Already-unit coefficients (e.g. parsed back from text) are kept bit-exact.
        if (n - 1.0).abs() < 1e-15 && w >= 0.0 {
            return Ok(Rotation(UnitQuaternion::new_unchecked(q)));
        }
        Ok(Self::canonical(q))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self::canonical(q.into_inner())
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    /// Rotation about the world vertical (y) axis, degrees.
    pub fn from_yaw_deg(yaw: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), yaw.to_radians())
    }

    /// SO(3) exponential of a rotation vector.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let theta = omega.norm();
        let q = if theta < SMALL_ANGLE {
            let half = omega * 0.5;
            Quaternion::new(1.0 - theta * theta / 8.0, half.x, half.y, half.z)
        } else {
            let s = (theta * 0.5).sin() / theta;
            Quaternion::new((theta * 0.5).cos(), omega.x * s, omega.y * s, omega.z * s)
        };
        Self::canonical(q)
    }

    /// SO(3) logarithm; the returned vector has norm in `[0, pi]`.
    pub fn log(&self) -> Vector3<f64> {
        let q = self.0.quaternion();
        let v = q.imag();
        let n = v.norm();
        let w = q.w;
        let theta = 2.0 * n.atan2(w);
        if theta < SMALL_ANGLE {
            v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w))
        } else {
            v * (theta / n)
        }
    }

    /// Rotation angle in radians, `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let q = self.0.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.0.inverse().into_inner())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self::canonical((self.0 * other.0).into_inner())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// Coefficients `(w, x, y, z)`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Norm of the stored quaternion (1 up to rounding).
    pub fn quaternion_norm(&self) -> f64 {
        self.0.quaternion().norm()
    }
}

/// Tangent-space increment of SE(3): `(omega, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Twist(Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z))
    }

    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn omega(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn v(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn as_vector(&self) -> &Vector6<f64> {
        &self.0
    }
}

impl From<Vector6<f64>> for Twist {
    fn from(v: Vector6<f64>) -> Self {
        Twist(v)
    }
}

/// Below this angle the cancellation-prone Jacobian coefficients use series.
const SERIES_ANGLE: f64 = 1e-3;

/// Coefficients `B = (1 - cos t)/t^2` and `C = (t - sin t)/t^3` of the left Jacobian.
fn left_jacobian_coeffs(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    let half_sin = (theta * 0.5).sin();
    let b = if theta < SMALL_ANGLE { 0.5 - t2 / 24.0 } else { 2.0 * half_sin * half_sin / t2 };
    let c = if theta < SERIES_ANGLE {
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (t2 * theta)
    };
    (b, c)
}

/// Left Jacobian of SO(3), the `V` matrix coupling rotation into translation.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let (b, c) = left_jacobian_coeffs(omega.norm());
    let w = hat(omega);
    Matrix3::identity() + w * b + w * w * c
}

fn so3_left_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let t2 = theta * theta;
    let d = if theta < SERIES_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = theta * 0.5;
        (1.0 - half / half.tan()) / t2
    };
    let w = hat(omega);
    Matrix3::identity() - w * 0.5 + w * w * d
}

/// Rigid-body transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Rotation::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose { rotation: Rotation::identity(), translation: t }
    }

    pub fn exp(xi: &Twist) -> Self {
        let omega = xi.omega();
        let rotation = Rotation::exp(&omega);
        let translation = so3_left_jacobian(&omega) * xi.v();
        Pose { rotation, translation }
    }

    pub fn log(&self) -> Result<Twist, GeometryError> {
        let angle = self.rotation.angle();
        if angle >= LOG_MAX_ANGLE {
            return Err(GeometryError::LogBranchAmbiguity { angle });
        }
        let omega = self.rotation.log();
        let v = so3_left_jacobian_inverse(&omega) * self.translation;
        Ok(Twist::new(omega, v))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.inverse();
        Pose { rotation, translation: -rotation.rotate(&self.translation) }
    }

    pub fn act(&self, p: &Point3) -> Point3 {
        self.rotation.rotate(p) + self.translation
    }

    /// Equivalent to `self.inverse().act(p)`, computed without forming the inverse.
    pub fn inverse_act(&self, p: &Point3) -> Point3 {
        self.rotation.unit_quaternion().inverse_transform_vector(&(p - self.translation))
    }

    /// Derivatives of `act(P, p)` w.r.t. a left twist on `P` and w.r.t. `p`.
    pub fn act_jacobians(&self, p: &Point3) -> (Matrix3x6<f64>, Matrix3<f64>) {
        let y = self.act(p);
        let mut j_pose = Matrix3x6::zeros();
        j_pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-hat(&y)));
        j_pose.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        (j_pose, self.rotation.matrix())
    }

    /// Derivatives of `inverse_act(P, p)` w.r.t. a left twist on `P` and w.r.t. `p`.
    pub fn inverse_act_jacobians(&self, p: &Point3) -> (Matrix3x6<f64>, Matrix3<f64>) {
        let rt = self.rotation.matrix().transpose();
        let mut j_pose = Matrix3x6::zeros();
        j_pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rt * hat(p)));
        j_pose.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-rt));
        (j_pose, rt)
    }

    /// Left retraction `exp(delta) * self`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        Pose::exp(delta).compose(self)
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.wxyz().iter().all(|v| v.is_finite())
    }
}
