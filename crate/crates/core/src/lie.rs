//! Minimal SO(3)/SE(3) helpers on top of nalgebra.

use nalgebra::{Matrix3, Rotation3, Vector3};

/// Skew-symmetric matrix `[w]x` such that `[w]x * a = w x a`.
#[inline]
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Exponential map from a rotation vector.
#[inline]
pub fn exp_so3(omega: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::new(*omega)
}

/// Logarithm of a rotation, returned as a rotation vector with angle in `[0, pi]`.
///
/// Uses `atan2` on the skew part so small angles keep full precision.
pub fn log_so3(rotation: &Rotation3<f64>) -> Vector3<f64> {
    let m = rotation.matrix();
    let s = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = s.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let angle = sin.atan2(cos);
    if sin > 1e-6 || cos > 0.0 {
        if sin < 1e-300 {
            return Vector3::zeros();
        }
        // angle / sin -> 1 as angle -> 0
        return s * (angle / sin);
    }
    // Near pi: recover the axis from the symmetric part.
    let b = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let (mut best, mut col) = (0, b[(0, 0)]);
    for i in 1..3 {
        if b[(i, i)] > col {
            best = i;
            col = b[(i, i)];
        }
    }
    let mut axis: Vector3<f64> = b.column(best).into();
    axis.normalize_mut();
    if axis.dot(&s) < 0.0 {
        axis = -axis;
    }
    axis * angle
}

/// Rotation angle in `[0, pi]`, accurate near zero.
pub fn rotation_angle(rotation: &Rotation3<f64>) -> f64 {
    let m = rotation.matrix();
    let s = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    s.norm().atan2(0.5 * (m.trace() - 1.0))
}

/// Deviation of `R^T R` from identity (max absolute entry).
pub fn orthonormality_error(rotation: &Matrix3<f64>) -> f64 {
    (rotation.transpose() * rotation - Matrix3::identity()).abs().max()
}

/// Rigid transform, camera-to-world when used as a camera pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    /// Maps a point from the local frame into the parent frame.
    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a point from the parent frame into the local frame.
    #[inline]
    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose::new(r_inv, -(r_inv * self.translation))
    }

    /// `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// Pose of `other` expressed in the frame of `self`.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}
