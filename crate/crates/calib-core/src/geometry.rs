//! Unit quaternions and rigid transforms.
//!
//! Conventions, fixed project-wide:
//!
//! - Quaternions are stored scalar-first `(w, x, y, z)` and multiply with the
//!   Hamilton convention (`i * j = k`).
//! - `rotate` applies the rotation the same way the equivalent matrix would:
//!   `q.rotate(v) == R(q) * v`.
//! - Tangent increments are applied on the right, `q * exp(delta)`, so a
//!   solver step is expressed in the body frame of the current estimate.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Below this squared angle the exponential map switches to its Taylor
/// expansion; sin(a)/a is numerically exact to f64 precision there.
const SMALL_ANGLE_SQ: f64 = 1e-16;

/// Unit quaternion representing a rotation, stored scalar-first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    /// Rotation of `angle_rad` about `axis`. The axis does not need to be
    /// normalized; a zero axis yields the identity.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quaternion::IDENTITY;
        }
        let half = 0.5 * angle_rad;
        let s = half.sin() / n;
        Quaternion::new(half.cos(), axis.x * s, axis.y * s, axis.z * s)
    }

    /// Exponential map from a rotation-vector tangent increment.
    pub fn exp_map(delta: &Vector3<f64>) -> Self {
        let theta_sq = delta.norm_squared();
        if theta_sq < SMALL_ANGLE_SQ {
            // sin(t/2)/t = 1/2 - t^2/48 + O(t^4); cos(t/2) = 1 - t^2/8 + O(t^4)
            let k = 0.5 - theta_sq / 48.0;
            Quaternion::new(1.0 - theta_sq / 8.0, delta.x * k, delta.y * k, delta.z * k)
        } else {
            let theta = theta_sq.sqrt();
            let k = (0.5 * theta).sin() / theta;
            Quaternion::new((0.5 * theta).cos(), delta.x * k, delta.y * k, delta.z * k)
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(&self, rhs: &Quaternion) -> Self {
        Quaternion::new(
            self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        )
    }

    /// Applies the rotation to a vector: `R(q) * v`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        // q * (0, v) * q^-1 expanded: v + 2w (u x v) + 2 u x (u x v)
        let u = Vector3::new(self.x, self.y, self.z);
        let uv = u.cross(v);
        v + 2.0 * (self.w * uv + u.cross(&uv))
    }

    /// Right-multiplicative tangent update `q * exp(delta)`, renormalized.
    pub fn local_update(&self, delta: &Vector3<f64>) -> Self {
        self.mul(&Quaternion::exp_map(delta)).normalized()
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Converts an orthonormal rotation matrix, picking the numerically
    /// stable branch by the largest diagonal combination (Shepperd's method).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized()
    }
}

/// Shortest-arc angle between two rotations, in degrees.
///
/// Insensitive to the quaternion double cover. Evaluated through the chord
/// length `4 asin(|q1 -/+ q2| / 2)`, which stays accurate for tiny angles
/// where the arccosine of the dot product loses all precision.
pub fn rotation_angle_between_deg(a: &Quaternion, b: &Quaternion) -> f64 {
    let dot = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
    let s = if dot < 0.0 { -1.0 } else { 1.0 };
    let dw = a.w - s * b.w;
    let dx = a.x - s * b.x;
    let dy = a.y - s * b.y;
    let dz = a.z - s * b.z;
    let chord = (dw * dw + dx * dx + dy * dy + dz * dz).sqrt();
    let half_chord = (0.5 * chord).clamp(0.0, 1.0);
    (4.0 * half_chord.asin()).to_degrees()
}

/// Rigid transform `x_out = R(q) x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rotation: Quaternion::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// Composition applying `other` first: `(self.compose(other))(x) == self(other(x))`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul(&other.rotation).normalized(),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.conjugate();
        Pose {
            rotation: rot_inv,
            translation: -rot_inv.rotate(&self.translation),
        }
    }
}
