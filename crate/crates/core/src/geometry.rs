//! Rigid-body poses and small vector helpers shared by every module.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Camera-to-world rigid transform: `x_world = rotation * x_cam + translation`.
///
/// Camera axes follow the pinhole convention: +x right, +y down, +z along the
/// optical axis. Translations are in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Builds a pose at `eye` looking along `forward`, with the image-up direction
    /// as close to `up` as the forward vector allows.
    ///
    /// Returns `None` when `forward` is zero or parallel to `up`.
    pub fn look_along(eye: Vec3, forward: Vec3, up: Vec3) -> Option<Self> {
        let z = forward.try_normalize(1e-12)?;
        let up_perp = up - z * up.dot(&z);
        let up_perp = up_perp.try_normalize(1e-9)?;
        // Image rows grow downwards, so camera +y is the opposite of "up".
        let y = -up_perp;
        let x = y.cross(&z);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Some(Self::new(rotation, eye))
    }

    /// Row-major `[R | t]` as 12 floats.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Self {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Self::new(rotation, Vec3::new(v[3], v[7], v[11]))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// World point into camera coordinates.
    #[inline]
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    pub fn position(&self) -> Vec3 {
        self.translation
    }

    pub fn optical_axis(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Camera up-vector in world coordinates: the negative image-vertical axis.
    pub fn up(&self) -> Vec3 {
        -self.rotation.column(1).into_owned()
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.column(0).into_owned()
    }

    /// Rotates the camera about its own optical axis by `angle` radians.
    pub fn rolled(&self, angle: f64) -> Pose {
        let roll = Rotation3::from_axis_angle(&Vec3::z_axis(), angle);
        Pose::new(self.rotation * roll.matrix(), self.translation)
    }

    /// Checks `RᵀR = I` and `det R = +1` within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        if !r.iter().all(|v| v.is_finite()) || !self.translation.iter().all(|v| v.is_finite()) {
            return false;
        }
        let gram = r.transpose() * r;
        (gram - Matrix3::identity()).abs().max() <= tol && (r.determinant() - 1.0).abs() <= tol
    }
}

/// Angle of the relative rotation `Rᵀ_a R_b`, in radians within `[0, π]`.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    cos.acos()
}

/// Signed angle from `from` to `to` about `axis`. Inputs need not be normalized
/// but must be roughly perpendicular to `axis`.
pub fn signed_angle(from: &Vec3, to: &Vec3, axis: &Vec3) -> f64 {
    let s = axis.dot(&from.cross(to));
    let c = from.dot(to);
    s.atan2(c)
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_tau(angle: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let a = angle.rem_euclid(tau);
    if a >= tau {
        0.0
    } else {
        a
    }
}

/// Deterministic unit vector perpendicular to `tangent`.
///
/// Seeds every rotation-minimizing frame in the crate so that the simulator and
/// the engine agree on the zero angle of a straight tube.
pub fn reference_normal(tangent: &Vec3) -> Vec3 {
    let t = tangent.normalize();
    let seed = if t.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (seed - t * seed.dot(&t)).normalize()
}

pub fn rotation_about(axis: &Vec3, angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle).into_inner()
}
