//! Shared geometric and sensor-data types used by every pipeline stage.
//!
//! The world frame is z-up with gravity `(0, 0, -9.81)` m/s²; the first
//! sensor pose defines the origin. Rotations are stored as unit quaternions
//! and renormalized after every composition; rotation deltas are
//! parameterized as axis-angle 3-vectors where a minimal parameterization
//! is required (optimization).

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Gravity in the world frame, m/s².
pub const GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// A 3D point in meters. The frame (sensor or world) is stated per use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const ORIGIN: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (self.as_vector() - other.as_vector()).norm()
    }

    /// Horizontal (xy-plane) distance.
    pub fn distance_xy(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// One lidar return inside a sweep.
///
/// `position` is in the sensor frame at emission time; `range` equals
/// `position.norm()`. `time_offset` is the emission time relative to the
/// sweep start and is monotone non-decreasing along scan order within a
/// ring.
#[derive(Debug, Clone, Copy)]
pub struct RangePoint {
    pub position: Point3,
    pub range: f64,
    pub ring: u16,
    /// Azimuth in radians, [0, 2π).
    pub azimuth: f64,
    /// Seconds since sweep start, [0, sweep period).
    pub time_offset: f64,
}

/// One full lidar sweep: ordered range points grouped by ring,
/// azimuth-ordered within each ring.
#[derive(Debug, Clone)]
pub struct Scan {
    pub points: Vec<RangePoint>,
    /// Absolute sweep start time, seconds.
    pub start_time: f64,
    /// Absolute sweep end time, seconds; always > `start_time`.
    pub end_time: f64,
}

impl Scan {
    pub fn duration(&self) -> f64 {
        self.end_time - self.start_time
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One inertial sample: body-frame angular rate (rad/s) and specific force
/// (m/s², i.e. acceleration minus gravity as sensed by the accelerometer).
#[derive(Debug, Clone, Copy)]
pub struct ImuSample {
    pub time: f64,
    pub angular_rate: Vector3<f64>,
    pub linear_accel: Vector3<f64>,
}

/// A rigid transform in SE(3): translation plus unit quaternion.
///
/// A pose maps body-frame coordinates into the parent frame:
/// `p_parent = rotation * p_body + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Pose with the given yaw (rotation about world z) and translation.
    pub fn from_yaw_translation(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::new(
            translation,
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        )
    }

    /// Composition: the result applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation =
            UnitQuaternion::new_normalize(self.rotation.into_inner() * other.rotation.into_inner());
        Pose {
            translation: self.translation + self.rotation * other.translation,
            rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose {
            translation: -(inv_rot * self.translation),
            rotation: inv_rot,
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.as_vector() + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Rotation angle of the relative rotation to `other`, radians.
    pub fn rotation_distance(&self, other: &Pose) -> f64 {
        self.rotation.angle_to(&other.rotation)
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Interpolates between two poses (lerp on translation, slerp on
    /// rotation) with `s` in [0, 1].
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let rotation = self.rotation.slerp(&other.rotation, s);
        Pose {
            translation: self.translation.lerp(&other.translation, s),
            rotation,
        }
    }
}

/// A time-indexed sequence of poses with strictly increasing times.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, Pose)>) -> Self {
        debug_assert!(
            samples.windows(2).all(|w| w[0].0 < w[1].0),
            "trajectory times must be strictly increasing"
        );
        Self { samples }
    }

    pub fn push(&mut self, time: f64, pose: Pose) {
        if let Some((last, _)) = self.samples.last() {
            debug_assert!(time > *last, "trajectory times must be strictly increasing");
        }
        self.samples.push((time, pose));
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&(f64, Pose)> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&(f64, Pose)> {
        self.samples.last()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.samples.first().map(|(t, _)| *t)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.samples.last().map(|(t, _)| *t)
    }

    /// Pose at time `t`, interpolating between bracketing samples and
    /// clamping outside the covered range. `None` on an empty trajectory.
    pub fn sample(&self, t: f64) -> Option<Pose> {
        let first = self.samples.first()?;
        if t <= first.0 {
            return Some(first.1);
        }
        let last = self.samples.last().unwrap();
        if t >= last.0 {
            return Some(last.1);
        }
        let idx = self.samples.partition_point(|(st, _)| *st <= t);
        let (t0, p0) = self.samples[idx - 1];
        let (t1, p1) = self.samples[idx];
        let s = (t - t0) / (t1 - t0);
        Some(p0.interpolate(&p1, s))
    }
}

/// Feature classification of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureClass {
    None,
    Edge,
    Planar,
}

/// Per-point labels attached by the ground and clustering stages.
///
/// Invariants: a ground point carries no cluster id, and a feature point is
/// never a ground point.
#[derive(Debug, Clone, Copy)]
pub struct PointLabel {
    pub ground: bool,
    pub cluster_id: Option<u32>,
    pub range: f64,
    pub cluster_size: u32,
    pub feature: FeatureClass,
}

impl PointLabel {
    pub fn unlabeled(range: f64) -> Self {
        Self {
            ground: false,
            cluster_id: None,
            range,
            cluster_size: 0,
            feature: FeatureClass::None,
        }
    }
}

/// Skew-symmetric matrix of `v`, i.e. `hat(v) * w == v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) exponential: rotation from an axis-angle 3-vector.
pub fn so3_exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*omega)
}

/// SO(3) logarithm: axis-angle 3-vector of a rotation.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    q.scaled_axis()
}

/// Right Jacobian of SO(3) at `omega`: `Exp(ω + δ) ≈ Exp(ω) Exp(Jr(ω) δ)`.
pub fn so3_right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    if theta < 1e-8 {
        return Matrix3::identity() - 0.5 * w + w * w / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() - w * ((1.0 - theta.cos()) / t2) + (w * w) * ((theta - theta.sin()) / (t2 * theta))
}

fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = hat(omega);
    if theta < 1e-8 {
        return Matrix3::identity() + 0.5 * w + w * w / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() + w * ((1.0 - theta.cos()) / t2) + (w * w) * ((theta - theta.sin()) / (t2 * theta))
}

/// SE(3) exponential of a 6-vector `(ρ, ω)`; translation part first.
pub fn se3_exp(xi: &[f64; 6]) -> Pose {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let omega = Vector3::new(xi[3], xi[4], xi[5]);
    Pose {
        translation: so3_left_jacobian(&omega) * rho,
        rotation: so3_exp(&omega),
    }
}

/// SE(3) logarithm; inverse of [`se3_exp`].
pub fn se3_log(pose: &Pose) -> [f64; 6] {
    let omega = so3_log(&pose.rotation);
    let vinv = so3_left_jacobian(&omega)
        .try_inverse()
        .expect("SO(3) left Jacobian is invertible below the π singularity");
    let rho = vinv * pose.translation;
    [rho.x, rho.y, rho.z, omega.x, omega.y, omega.z]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn pose_to_matrix(p: &Pose) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(p.rotation.to_rotation_matrix().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
        m
    }

    #[test]
    fn compose_identity() {
        let id = Pose::identity();
        let c = id.compose(&id);
        assert_eq!(c.translation, Vector3::zeros());
        assert_relative_eq!(c.rotation.angle(), 0.0);
    }

    #[test]
    fn compose_pure_translations() {
        let a = Pose::from_translation(1.0, 0.0, 0.0);
        let b = Pose::from_translation(0.0, 2.0, 0.0);
        let c = a.compose(&b);
        assert_relative_eq!(c.translation, Vector3::new(1.0, 2.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn compose_matches_matrix_product() {
        // Rz(90°) ∘ T(1,0,0): expected translation (0,1,0), rotation Rz(90°).
        let rz = Pose::from_yaw_translation(FRAC_PI_2, Vector3::zeros());
        let t = Pose::from_translation(1.0, 0.0, 0.0);
        let c = rz.compose(&t);
        assert_relative_eq!(c.translation, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(c.rotation.angle(), FRAC_PI_2, epsilon = 1e-12);

        let oracle = pose_to_matrix(&rz) * pose_to_matrix(&t);
        let got = pose_to_matrix(&c);
        assert_relative_eq!(oracle, got, epsilon = 1e-12);
    }

    #[test]
    fn invert_translation() {
        let p = Pose::from_translation(3.0, 0.0, 0.0);
        let inv = p.inverse();
        assert_relative_eq!(inv.translation, Vector3::new(-3.0, 0.0, 0.0), epsilon = 1e-15);
        let c = p.compose(&inv);
        assert!(c.translation.norm() < 1e-9 && c.rotation.angle() < 1e-9);
    }

    #[test]
    fn transform_point_examples() {
        let id = Pose::identity();
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(id.transform_point(&p), p);

        let lift = Pose::from_translation(0.0, 0.0, 5.0);
        let q = lift.transform_point(&Point3::ORIGIN);
        assert_eq!(q, Point3::new(0.0, 0.0, 5.0));

        // Rz(90°) rotation-matrix oracle.
        let rz = Pose::from_yaw_translation(FRAC_PI_2, Vector3::zeros());
        let r = rz.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(r.as_vector(), Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn trajectory_interpolation() {
        let mut traj = Trajectory::default();
        traj.push(0.0, Pose::from_translation(0.0, 0.0, 0.0));
        traj.push(1.0, Pose::from_translation(2.0, 0.0, 0.0));
        let mid = traj.sample(0.5).unwrap();
        assert_relative_eq!(mid.translation.x, 1.0, epsilon = 1e-12);
        // clamped outside the range
        assert_relative_eq!(traj.sample(5.0).unwrap().translation.x, 2.0);
    }

    #[test]
    fn se3_exp_log_roundtrip() {
        let xi = [0.3, -0.2, 0.5, 0.1, 0.4, -0.3];
        let p = se3_exp(&xi);
        let back = se3_log(&p);
        for i in 0..6 {
            assert_relative_eq!(xi[i], back[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let omega = Vector3::new(0.4, -0.7, 0.2);
        let jr = so3_right_jacobian(&omega);
        let h = 1e-6;
        for col in 0..3 {
            let mut dp = Vector3::zeros();
            dp[col] = h;
            // Exp(ω)⁻¹ Exp(ω + δ) ≈ Exp(Jr δ)
            let lhs = so3_log(&(so3_exp(&omega).inverse() * so3_exp(&(omega + dp))));
            let rhs = jr * dp;
            assert_relative_eq!(lhs, rhs, epsilon = 1e-9);
        }
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-10.0f64..10.0),
            prop::array::uniform3(-1.0f64..1.0),
        )
            .prop_map(|(t, axis)| {
                Pose::new(
                    Vector3::new(t[0], t[1], t[2]),
                    so3_exp(&Vector3::new(axis[0], axis[1], axis[2])),
                )
            })
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            prop_assert!((lhs.translation - rhs.translation).norm() < 1e-9);
            prop_assert!(lhs.rotation.angle_to(&rhs.rotation) < 1e-9);
        }

        #[test]
        fn invert_composes_to_identity(p in arb_pose()) {
            let c = p.compose(&p.inverse());
            prop_assert!(c.translation.norm() < 1e-9);
            prop_assert!(c.rotation.angle() < 1e-9);
        }

        #[test]
        fn transform_preserves_distances(p in arb_pose(),
                                         a in prop::array::uniform3(-50.0f64..50.0),
                                         b in prop::array::uniform3(-50.0f64..50.0)) {
            let pa = Point3::new(a[0], a[1], a[2]);
            let pb = Point3::new(b[0], b[1], b[2]);
            let d0 = pa.distance(&pb);
            let d1 = p.transform_point(&pa).distance(&p.transform_point(&pb));
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn quaternion_norm_stays_unit(a in arb_pose(), b in arb_pose()) {
            let mut acc = a;
            for _ in 0..200 {
                acc = acc.compose(&b);
            }
            prop_assert!((acc.rotation.into_inner().norm() - 1.0).abs() < 1e-9);
        }
    }
}
