//! Rigid-body algebra, the pinhole camera, and two-view triangulation.
//!
//! Camera frames are right-handed with z forward, x right and y down. Poses
//! map points from a source frame into a target frame (`p_target = R p + t`),
//! so a world-to-camera pose is written `T_cw` and its inverse `T_wc`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rotations closer than this to pi have no stable logarithm.
const LOG_PI_MARGIN: f64 = 1e-6;
const SMALL_ANGLE: f64 = 1e-4;

/// Minimum ray angle accepted when triangulating, in degrees.
pub const DEFAULT_MIN_PARALLAX_DEG: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("depth must be positive (got {depth})")]
    NonPositiveDepth { depth: f64 },
    #[error("rotation angle {angle} is too close to pi for a stable logarithm")]
    DegenerateRotation { angle: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("triangulation failed: {0}")]
    Triangulation(TriangulationFailure),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriangulationFailure {
    /// Ray angle below the configured minimum (radians).
    LowParallax { parallax: f64 },
    /// The homogeneous solution lies at infinity.
    PointAtInfinity,
    /// Solution lies behind one of the cameras.
    Cheirality { depth_a: f64, depth_b: f64 },
}

impl fmt::Display for TriangulationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriangulationFailure::LowParallax { parallax } => {
                write!(f, "parallax {:.4} deg below threshold", parallax.to_degrees())
            }
            TriangulationFailure::PointAtInfinity => write!(f, "point at infinity"),
            TriangulationFailure::Cheirality { depth_a, depth_b } => {
                write!(f, "negative depth (a={depth_a}, b={depth_b})")
            }
        }
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation about the x axis.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the y axis (the gravity axis in the y-down convention).
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the z axis.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Minimal 6-DoF increment: rotational part first, translational second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Twist {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.rotation);
        v.fixed_rows_mut::<3>(3).copy_from(&self.translation);
        v
    }
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)`.
fn so3_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let (s, c) = theta.sin_cos();
        (s / theta, (1.0 - c) / (theta * theta), (theta - s) / (theta * theta * theta))
    }
}

/// Rigid transform in SE(3).
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.quaternion();
        f.debug_struct("Pose")
            .field("t", &[self.translation.x, self.translation.y, self.translation.z])
            .field("q_xyzw", &q)
            .finish()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Builds a pose from a rotation matrix, re-orthonormalising it.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_matrix_eps(&rotation, 1e-15, 32, Rotation3::identity())
            .into_inner();
        Self { rotation, translation }
    }

    /// Builds a pose without re-orthonormalising; the caller guarantees `rotation` is in SO(3).
    pub fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Quaternion in `[x, y, z, w]` order plus translation.
    pub fn from_quaternion(q_xyzw: [f64; 4], translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(q_xyzw[3], q_xyzw[0], q_xyzw[1], q_xyzw[2]));
        Self { rotation: q.to_rotation_matrix().into_inner(), translation }
    }

    /// Quaternion in `[x, y, z, w]` order with non-negative `w`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.i, q.j, q.k, q.w]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
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

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Max deviation of `R^T R` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn exp(xi: &Twist) -> Pose {
        let w = xi.rotation;
        let theta = w.norm();
        let (a, b, c) = so3_coefficients(theta);
        let wx = skew(&w);
        let wx2 = wx * wx;
        let rotation = Matrix3::identity() + wx * a + wx2 * b;
        let v = Matrix3::identity() + wx * b + wx2 * c;
        Pose { rotation, translation: v * xi.translation }
    }

    pub fn log(&self) -> Result<Twist, GeometryError> {
        let r = &self.rotation;
        let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
        let s = v.norm();
        let c = (r.trace() - 1.0) * 0.5;
        let theta = s.atan2(c);
        if PI - theta < LOG_PI_MARGIN {
            return Err(GeometryError::DegenerateRotation { angle: theta });
        }
        let w = if theta < SMALL_ANGLE {
            v * (1.0 + theta * theta / 6.0)
        } else {
            v * (theta / s)
        };
        let wx = skew(&w);
        let coef = if theta < SMALL_ANGLE {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            let (a, b, _) = so3_coefficients(theta);
            (1.0 - a / (2.0 * b)) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - wx * 0.5 + wx * wx * coef;
        Ok(Twist::new(w, v_inv * self.translation))
    }

    /// Left-multiplicative update `exp(delta) * self`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        let mut p = Pose::exp(delta).compose(self);
        // keep drift from accumulating over many small updates
        p.rotation = orthonormalize(&p.rotation);
        p
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    // one Newton step of the polar decomposition; exact for already-orthonormal input
    let rt_inv = r.transpose().try_inverse().unwrap_or_else(Matrix3::identity);
    (r + rt_inv) * 0.5
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    v.norm().atan2((r.trace() - 1.0) * 0.5)
}

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Intrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl TryFrom<[f64; 4]> for Intrinsics {
    type Error = GeometryError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Intrinsics::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Intrinsics> for [f64; 4] {
    fn from(k: Intrinsics) -> Self {
        [k.fx, k.fy, k.cx, k.cy]
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics("non-finite principal point".into()));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Normalised bearing `(x/z, y/z, 1)` of a pixel.
    pub fn unproject(&self, z: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((z.x - self.cx) / self.fx, (z.y - self.cy) / self.fy, 1.0)
    }

    /// Projects without checking depth; used where the caller already did.
    pub fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

pub fn project(k: &Intrinsics, p_cam: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    if !(p_cam.z > 0.0) {
        return Err(GeometryError::BehindCamera { depth: p_cam.z });
    }
    Ok(k.project_unchecked(p_cam))
}

pub fn backproject(k: &Intrinsics, z: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::NonPositiveDepth { depth });
    }
    Ok(Vector3::new((z.x - k.cx) * depth / k.fx, (z.y - k.cy) * depth / k.fy, depth))
}

/// Angle between the viewing rays of two observations, in radians.
pub fn parallax(k: &Intrinsics, cam_a: &Pose, cam_b: &Pose, z_a: &Vector2<f64>, z_b: &Vector2<f64>) -> f64 {
    let ray_a = cam_a.rotation().transpose() * k.unproject(z_a);
    let ray_b = cam_b.rotation().transpose() * k.unproject(z_b);
    ray_a.cross(&ray_b).norm().atan2(ray_a.dot(&ray_b))
}

/// Two-view DLT triangulation with the default 1 degree parallax guard.
///
/// `cam_a` and `cam_b` are world-to-camera poses; the result is a world point.
pub fn triangulate(
    k: &Intrinsics,
    cam_a: &Pose,
    cam_b: &Pose,
    z_a: &Vector2<f64>,
    z_b: &Vector2<f64>,
) -> Result<Vector3<f64>, GeometryError> {
    triangulate_with_parallax(k, cam_a, cam_b, z_a, z_b, DEFAULT_MIN_PARALLAX_DEG.to_radians())
}

pub fn triangulate_with_parallax(
    k: &Intrinsics,
    cam_a: &Pose,
    cam_b: &Pose,
    z_a: &Vector2<f64>,
    z_b: &Vector2<f64>,
    min_parallax: f64,
) -> Result<Vector3<f64>, GeometryError> {
    let angle = parallax(k, cam_a, cam_b, z_a, z_b);
    if !(angle >= min_parallax) {
        return Err(GeometryError::Triangulation(TriangulationFailure::LowParallax { parallax: angle }));
    }

    // DLT in normalised image coordinates
    let na = k.unproject(z_a);
    let nb = k.unproject(z_b);
    let pa = cam_a.to_matrix();
    let pb = cam_b.to_matrix();
    let mut a = Matrix4::zeros();
    for j in 0..4 {
        a[(0, j)] = na.x * pa[(2, j)] - pa[(0, j)];
        a[(1, j)] = na.y * pa[(2, j)] - pa[(1, j)];
        a[(2, j)] = nb.x * pb[(2, j)] - pb[(0, j)];
        a[(3, j)] = nb.y * pb[(2, j)] - pb[(1, j)];
    }
    // null vector of A = eigenvector of A^T A with the smallest eigenvalue
    let eig = (a.transpose() * a).symmetric_eigen();
    let (min_idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    let h = eig.eigenvectors.column(min_idx);
    if h[3].abs() < 1e-12 * h.norm() {
        return Err(GeometryError::Triangulation(TriangulationFailure::PointAtInfinity));
    }
    let x = Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);

    let depth_a = cam_a.transform_point(&x).z;
    let depth_b = cam_b.transform_point(&x).z;
    if !(depth_a > 0.0 && depth_b > 0.0) {
        return Err(GeometryError::Triangulation(TriangulationFailure::Cheirality { depth_a, depth_b }));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn k() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap()
    }

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-2.0f64..2.0), prop::array::uniform3(-10.0f64..10.0)).prop_map(|(w, t)| {
            let mut p = Pose::exp(&Twist::new(Vector3::from(w), Vector3::zeros()));
            p.translation = Vector3::from(t);
            p
        })
    }

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.rotation - b.rotation).abs().max() < tol && (a.translation - b.translation).abs().max() < tol
    }

    #[test]
    fn compose_by_hand() {
        let a = Pose::new(rot_z(PI / 2.0), Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::new(rot_z(PI / 2.0), Vector3::zeros());
        let c = a.compose(&b);
        assert!((c.rotation - rot_z(PI)).abs().max() < 1e-12);
        assert_relative_eq!(c.translation, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert!(close(&Pose::identity().compose(&a), &a, 1e-15));
    }

    #[test]
    fn inverse_by_hand() {
        assert!(close(&Pose::identity().inverse(), &Pose::identity(), 0.0 + 1e-300));
        let t = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)).inverse();
        assert_eq!(*t.translation(), Vector3::new(-1.0, -2.0, -3.0));
        let p = Pose::new(rot_z(PI / 2.0), Vector3::new(1.0, 0.0, 0.0)).inverse();
        assert!((p.rotation - rot_z(-PI / 2.0)).abs().max() < 1e-12);
        assert_relative_eq!(p.translation, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn exp_quarter_turn() {
        assert!(close(&Pose::exp(&Twist::zero()), &Pose::identity(), 1e-15));
        let p = Pose::exp(&Twist::new(Vector3::new(0.0, 0.0, PI / 2.0), Vector3::zeros()));
        assert!((p.rotation - rot_z(PI / 2.0)).abs().max() < 1e-12);
        assert_eq!(p.translation.norm(), 0.0);
    }

    #[test]
    fn log_near_pi_is_degenerate() {
        let p = Pose::new(rot_x(PI), Vector3::zeros());
        assert!(matches!(p.log(), Err(GeometryError::DegenerateRotation { .. })));
    }

    #[test]
    fn quaternion_round_trip() {
        let p = Pose::new(rot_y(0.3) * rot_x(-0.2), Vector3::new(1.0, -2.0, 0.5));
        let q = Pose::from_quaternion(p.quaternion(), *p.translation());
        assert!(close(&p, &q, 1e-14));
    }

    #[test]
    fn pinhole_by_hand() {
        let k = k();
        assert_eq!(project(&k, &Vector3::new(0.0, 0.0, 2.0)).unwrap(), Vector2::new(50.0, 50.0));
        assert_eq!(project(&k, &Vector3::new(1.0, 1.0, 2.0)).unwrap(), Vector2::new(100.0, 100.0));
        assert!(matches!(project(&k, &Vector3::new(0.0, 0.0, -1.0)), Err(GeometryError::BehindCamera { .. })));
        assert_eq!(backproject(&k, &Vector2::new(50.0, 50.0), 3.0).unwrap(), Vector3::new(0.0, 0.0, 3.0));
        assert_eq!(backproject(&k, &Vector2::new(150.0, 50.0), 2.0).unwrap(), Vector3::new(2.0, 0.0, 2.0));
        assert!(backproject(&k, &Vector2::new(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn triangulation_cases() {
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        let x = Vector3::new(0.7, -0.3, 8.0);
        let cam_a = Pose::identity();
        let cam_b = Pose::new(rot_y(-0.05), Vector3::new(-1.0, 0.0, 0.1));
        let za = project(&k, &cam_a.transform_point(&x)).unwrap();
        let zb = project(&k, &cam_b.transform_point(&x)).unwrap();
        let got = triangulate(&k, &cam_a, &cam_b, &za, &zb).unwrap();
        assert!((got - x).norm() < 1e-6);

        let err = triangulate(&k, &cam_a, &cam_a, &za, &za).unwrap_err();
        assert!(matches!(err, GeometryError::Triangulation(TriangulationFailure::LowParallax { .. })));

        // point behind camera b: its pixel is computed ignoring the sign of depth
        let cam_b = Pose::new(Matrix3::identity(), Vector3::new(-1.0, 0.0, -10.0));
        let pb = cam_b.transform_point(&x);
        assert!(pb.z < 0.0);
        let zb = k.project_unchecked(&pb);
        let err = triangulate(&k, &cam_a, &cam_b, &za, &zb).unwrap_err();
        assert!(matches!(err, GeometryError::Triangulation(TriangulationFailure::Cheirality { .. })));
    }

    proptest! {
        #[test]
        fn group_laws(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-9));
            prop_assert!(close(&a.compose(&a.inverse()), &Pose::identity(), 1e-9));
            prop_assert!(close(&a.compose(&Pose::identity()), &a, 1e-12));
            prop_assert!(a.orthonormality_error() < 1e-9);
        }

        #[test]
        fn exp_log_round_trip(axis in prop::array::uniform3(-1.0f64..1.0), angle in 0.0f64..3.0,
                              t in prop::array::uniform3(-5.0f64..5.0)) {
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let xi = Twist::new(axis.normalize() * angle, Vector3::from(t));
            let back = Pose::exp(&xi).log().unwrap();
            prop_assert!((back.rotation - xi.rotation).norm() < 1e-9);
            prop_assert!((back.translation - xi.translation).norm() < 1e-9);
        }

        #[test]
        fn pinhole_round_trips(u in 0.0f64..640.0, v in 0.0f64..480.0, d in 0.1f64..100.0,
                               p in prop::array::uniform3(-10.0f64..10.0)) {
            let k = Intrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap();
            let z = Vector2::new(u, v);
            let back = project(&k, &backproject(&k, &z, d).unwrap()).unwrap();
            prop_assert!((back - z).norm() < 1e-9);
            let mut p = Vector3::from(p);
            p.z = p.z.abs() + 0.5;
            let q = backproject(&k, &project(&k, &p).unwrap(), p.z).unwrap();
            prop_assert!((q - p).norm() < 1e-9);
        }

        #[test]
        fn triangulation_recovers_point(x in prop::array::uniform3(-3.0f64..3.0), depth in 4.0f64..20.0,
                                        baseline in prop::array::uniform3(-1.0f64..1.0), yaw in -0.1f64..0.1) {
            let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
            let point = Vector3::new(x[0], x[1], depth + x[2]);
            let cam_a = Pose::identity();
            let cam_b = Pose::new(rot_y(yaw), Vector3::from(baseline));
            let pb = cam_b.transform_point(&point);
            prop_assume!(pb.z > 0.5);
            let za = project(&k, &point).unwrap();
            let zb = project(&k, &pb).unwrap();
            prop_assume!(parallax(&k, &cam_a, &cam_b, &za, &zb) >= 1f64.to_radians());
            let got = triangulate(&k, &cam_a, &cam_b, &za, &zb).unwrap();
            prop_assert!((got - point).norm() < 1e-6, "err {}", (got - point).norm());
        }
    }
}
