//! Rigid-body pose algebra, quaternions, dual quaternions and the pinhole
//! camera model.
//!
//! Poses are camera-to-model: applying a [`Pose`] to a point expressed in
//! camera coordinates yields the same point in model (world) coordinates.
//! Camera space follows the usual computer-vision convention (x right,
//! y down, z forward) and integer pixel coordinates address pixel centers.

use std::ops::{Add, Mul, Neg};

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for the orthonormality and determinant checks of [`Pose`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics together with the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Intrinsics {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidIntrinsics(format!(
                "image size {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx={}, fy={}, cx={}, cy={})",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        let w = self.width as f64;
        let h = self.height as f64;
        (w * w + h * h).sqrt()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Intrinsics of the same camera sampled `factor` times more densely
    /// along each axis. Pixel centers stay aligned with the original grid.
    pub fn supersampled(&self, factor: u32) -> Intrinsics {
        let s = factor.max(1) as f64;
        let offset = (s - 1.0) / 2.0;
        Intrinsics {
            width: self.width * factor.max(1),
            height: self.height * factor.max(1),
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s + offset,
            cy: self.cy * s + offset,
        }
    }
}

/// Projects a camera-space point onto the image plane.
///
/// Returns `None` when the point is not strictly in front of the camera.
/// The result may fall outside the image bounds.
pub fn project(point: &Vector3<f64>, k: &Intrinsics) -> Option<Vector2<f64>> {
    if !(point.z > 0.0) {
        return None;
    }
    Some(Vector2::new(
        k.fx * point.x / point.z + k.cx,
        k.fy * point.y / point.z + k.cy,
    ))
}

/// Lifts pixel `u` with depth `depth` (camera-space z, meters) into camera
/// space. Returns `None` for non-positive or non-finite depth.
pub fn backproject(u: &Vector2<f64>, depth: f64, k: &Intrinsics) -> Option<Vector3<f64>> {
    if !(depth > 0.0) || !depth.is_finite() {
        return None;
    }
    Some(Vector3::new(
        (u.x - k.cx) / k.fx * depth,
        (u.y - k.cy) / k.fy * depth,
        depth,
    ))
}

/// Plain (not necessarily unit) quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub const fn zero() -> Self {
        Quaternion::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn pure(v: &Vector3<f64>) -> Self {
        Quaternion::new(0.0, v.x, v.y, v.z)
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn conjugate(&self) -> Self {
        Quaternion::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn scale(&self, s: f64) -> Self {
        Quaternion::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, o: Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }
}

/// Quaternion of norm one. `q` and `-q` describe the same rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion(Quaternion);

impl UnitQuaternion {
    pub fn identity() -> Self {
        UnitQuaternion(Quaternion::new(1.0, 0.0, 0.0, 0.0))
    }

    /// Normalizes `q`. Fails on zero or non-finite input.
    pub fn from_quaternion(q: Quaternion) -> Result<Self> {
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidRotation(format!("cannot normalize quaternion {:?}", q)));
        }
        Ok(UnitQuaternion(q.scale(1.0 / n)))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (angle_rad / 2.0).sin_cos();
        UnitQuaternion(Quaternion::new(c, a.x * s, a.y * s, a.z * s))
    }

    /// Shepperd's method, branching on the largest diagonal term.
    pub fn from_rotation_matrix(r: &Matrix3<f64>) -> Self {
        let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            Quaternion::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let n = q.norm();
        UnitQuaternion(q.scale(1.0 / n))
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = self.0;
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

    pub fn quaternion(&self) -> Quaternion {
        self.0
    }

    pub fn dot(&self, other: &UnitQuaternion) -> f64 {
        self.0.dot(&other.0)
    }
}

impl Neg for UnitQuaternion {
    type Output = UnitQuaternion;
    fn neg(self) -> UnitQuaternion {
        UnitQuaternion(-self.0)
    }
}

/// Rigid transform in SE(3), camera-to-model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, requiring a proper rotation within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOLERANCE)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("translation has non-finite entries".into()));
        }
        Ok(Pose { rotation, translation })
    }

    /// Accepts a rotation that is orthonormal within `tolerance` and snaps
    /// it onto SO(3) when it deviates by more than [`ROTATION_TOLERANCE`].
    /// Rotations already within [`ROTATION_TOLERANCE`] are kept bit-exact.
    pub fn from_approximate(rotation: Matrix3<f64>, translation: Vector3<f64>, tolerance: f64) -> Result<Self> {
        check_rotation(&rotation, tolerance)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("translation has non-finite entries".into()));
        }
        let rotation = if check_rotation(&rotation, ROTATION_TOLERANCE).is_ok() {
            rotation
        } else {
            UnitQuaternion::from_rotation_matrix(&rotation).to_rotation_matrix()
        };
        Ok(Pose { rotation, translation })
    }

    pub fn from_quaternion(q: &UnitQuaternion, translation: Vector3<f64>) -> Self {
        Pose {
            rotation: q.to_rotation_matrix(),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle_rad: f64, translation: Vector3<f64>) -> Self {
        Pose::from_quaternion(&UnitQuaternion::from_axis_angle(axis, angle_rad), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion {
        UnitQuaternion::from_rotation_matrix(&self.rotation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            translation: -(rt * self.translation),
            rotation: rt,
        }
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Top 3x4 block in row-major order.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
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

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
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

/// Checks `RᵀR = I` entrywise and `det R = 1`, both within `tolerance`.
pub fn check_rotation(r: &Matrix3<f64>, tolerance: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidRotation("rotation has non-finite entries".into()));
    }
    let det = r.determinant();
    if det < 0.0 {
        return Err(Error::ImproperRotation(det));
    }
    let gram = r.transpose() * r - Matrix3::identity();
    let worst = gram.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if worst > tolerance {
        return Err(Error::InvalidRotation(format!(
            "rotation is not orthonormal (max |RᵀR - I| = {worst:.3e})"
        )));
    }
    if (det - 1.0).abs() > tolerance {
        return Err(Error::InvalidRotation(format!(
            "rotation determinant {det} deviates from 1"
        )));
    }
    Ok(())
}

/// Angle in degrees between two rotations, in `[0, 180]`.
pub fn angular_error(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> f64 {
    let q1 = UnitQuaternion::from_rotation_matrix(r1);
    let q2 = UnitQuaternion::from_rotation_matrix(r2);
    quaternion_angle_deg(&q1, &q2)
}

/// Same as [`angular_error`] on quaternions; insensitive to the sign of either.
///
/// Evaluates `2·acos(|q1·q2|)` through the relative rotation
/// `q1⁻¹q2 = (w, v)` as `2·atan2(|v|, |w|)`, which stays accurate near 0°
/// where `acos` loses half of the significant digits.
pub fn quaternion_angle_deg(q1: &UnitQuaternion, q2: &UnitQuaternion) -> f64 {
    let rel = q1.quaternion().conjugate() * q2.quaternion();
    let half = rel.vector().norm().atan2(rel.w.abs());
    (2.0 * half).to_degrees().clamp(0.0, 180.0)
}

/// Euclidean distance between the two camera centers, in meters.
pub fn translation_error(p1: &Pose, p2: &Pose) -> f64 {
    (p1.translation - p2.translation).norm()
}

/// Dual quaternion `real + ε dual` encoding a rigid transform, with
/// `dual = ½ · t · real`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuaternion {
    pub real: Quaternion,
    pub dual: Quaternion,
}

impl DualQuaternion {
    pub fn from_pose(pose: &Pose) -> Self {
        let real = pose.quaternion().quaternion();
        let dual = (Quaternion::pure(&pose.translation) * real).scale(0.5);
        DualQuaternion { real, dual }
    }

    /// Scales to a unit real part and removes the component of the dual part
    /// parallel to it.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.real.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::DegenerateBlend);
        }
        let real = self.real.scale(1.0 / n);
        let dual = self.dual.scale(1.0 / n);
        let dual = dual + real.scale(-real.dot(&dual));
        Ok(DualQuaternion { real, dual })
    }

    pub fn to_pose(&self) -> Result<Pose> {
        let dq = self.normalized()?;
        let t = (dq.dual * dq.real.conjugate()).scale(2.0).vector();
        let q = UnitQuaternion::from_quaternion(dq.real)?;
        Ok(Pose::from_quaternion(&q, t))
    }

    fn flipped(&self) -> Self {
        DualQuaternion {
            real: -self.real,
            dual: -self.dual,
        }
    }
}

/// Dual-quaternion linear blending of rigid transforms.
///
/// Each dual quaternion is sign-aligned with the first one, the weighted sum
/// is renormalized and converted back to a pose. Weights are normalized
/// internally.
pub fn dlb_blend(poses: &[Pose], weights: &[f64]) -> Result<Pose> {
    if poses.is_empty() {
        return Err(Error::EmptyBlend);
    }
    if poses.len() != weights.len() {
        return Err(Error::InvalidArgument(format!(
            "{} poses but {} weights",
            poses.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument(
            "blend weights must be finite and non-negative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("blend weights are all zero".into()));
    }
    let pivot = DualQuaternion::from_pose(&poses[0]);
    let mut acc = DualQuaternion {
        real: Quaternion::zero(),
        dual: Quaternion::zero(),
    };
    for (pose, w) in poses.iter().zip(weights) {
        let mut dq = DualQuaternion::from_pose(pose);
        if dq.real.dot(&pivot.real) < 0.0 {
            dq = dq.flipped();
        }
        let w = w / total;
        acc.real = acc.real + dq.real.scale(w);
        acc.dual = acc.dual + dq.dual.scale(w);
    }
    acc.to_pose()
}
