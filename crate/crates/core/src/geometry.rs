//! Rigid poses, pinhole intrinsics and the stereo rig.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a matrix is a proper rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("matrix is not a proper rotation (orthonormality error {orthonormality:e}, det {det})")]
    NotARotation { orthonormality: f64, det: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("baseline must be positive, got {0}")]
    InvalidBaseline(f64),
}

/// Pinhole camera intrinsics in pixels. Images are assumed rectified and undistorted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub intrinsics: CameraIntrinsics,
    /// Distance between the optical centres, meters.
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(intrinsics: CameraIntrinsics, baseline: f64) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        if !(baseline > 0.0) {
            return Err(GeometryError::InvalidBaseline(baseline));
        }
        Ok(Self { intrinsics, baseline })
    }
}

/// Rigid transform `x -> R x + t`.
///
/// Rotations are kept as matrices; quaternions only appear when reading or
/// writing trajectory files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a pose, rejecting matrices that are not proper rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let orthonormality = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(orthonormality <= ROTATION_TOLERANCE && (det - 1.0).abs() <= ROTATION_TOLERANCE)
            || !translation.iter().all(|v| v.is_finite())
        {
            return Err(GeometryError::NotARotation { orthonormality, det });
        }
        Ok(Self { rotation, translation })
    }

    /// Projects an arbitrary 3x3 matrix onto SO(3) (nearest rotation in the
    /// Frobenius sense) and builds the pose.
    pub fn from_approximate_rotation(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        Self::new(project_to_rotation(&rotation), translation)
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: *rotation.matrix(), translation }
    }

    /// Rotation from an axis-angle vector (radians) plus a translation.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::from_rotation(Rotation3::new(axis_angle), translation)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: *q.to_rotation_matrix().matrix(), translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self, GeometryError> {
        Self::new(m.fixed_view::<3, 3>(0, 0).into_owned(), m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    /// Largest absolute entry difference of the 4x4 matrices.
    pub fn max_abs_diff(&self, other: &PoseSE3) -> f64 {
        (self.to_homogeneous() - other.to_homogeneous()).abs().max()
    }

    /// Rotation angle of `self⁻¹ ∘ other`, radians.
    pub fn angle_to(&self, other: &PoseSE3) -> f64 {
        let r = self.rotation.transpose() * other.rotation;
        // atan2 stays accurate near zero where acos of the trace does not.
        let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
        s.atan2((r.trace() - 1.0) / 2.0)
    }

    /// Left-multiplies by the exponential of a twist `(ρ, φ)`:
    /// `R ← Exp(φ) R`, `t ← Exp(φ) t + ρ`.
    pub fn retract_left(&self, translation_step: &Vector3<f64>, rotation_step: &Vector3<f64>) -> PoseSE3 {
        let dr = *Rotation3::new(*rotation_step).matrix();
        PoseSE3 {
            rotation: dr * self.rotation,
            translation: dr * self.translation + translation_step,
        }
    }

    /// Re-projects the rotation onto SO(3); used to stop round-off drift.
    pub fn renormalized(&self) -> PoseSE3 {
        PoseSE3 { rotation: project_to_rotation(&self.rotation), translation: self.translation }
    }
}

/// Nearest rotation to `m` via SVD, with determinant sign correction.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    u * s * v_t
}

/// Pinhole projection of a camera-frame point.
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Vector2<f64>, GeometryError> {
    if !(p.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Inverse of [`project`] for a known depth.
pub fn backproject(u: f64, v: f64, z: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>, GeometryError> {
    if !(z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(Vector3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
