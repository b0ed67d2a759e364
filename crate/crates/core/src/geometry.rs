//! Pinhole projection, SE(3) exponential/logarithm and per-pixel warping.
//!
//! Conventions used throughout the crate:
//!
//! * pixel coordinates are `(column, row)` with the origin at the center of
//!   the top-left pixel, so integer coordinates address stored samples;
//! * camera frame is z forward, x right, y down;
//! * a twist is ordered `(v, w)`: translation first, rotation second;
//! * an inter-frame *motion* is the transform that maps points expressed in
//!   the current camera frame into the previous camera frame, i.e.
//!   `P_prev⁻¹ · P_cur` for world-from-camera poses `P`.

use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::DepthImage;

/// Angles below this use the Taylor expansions of the SO(3)/SE(3) series.
const SMALL_ANGLE: f64 = 1e-8;

/// Pinhole camera parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!(
                "focal lengths must be positive and finite, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64)
            || !(self.cy > 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::Config(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics with the principal point at the image center and
    /// `fx = fy = focal`.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        CameraIntrinsics {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    /// Default Kinect-style intrinsics rescaled to `width` columns.
    pub fn kinect_scaled(width: usize, height: usize) -> Self {
        let s = width as f64 / 640.0;
        CameraIntrinsics {
            fx: 525.0 * s,
            fy: 525.0 * s,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    /// Intrinsics of a pyramid level produced by `level` rounds of 2×2
    /// block averaging.
    pub fn at_level(&self, level: usize) -> Self {
        let mut k = *self;
        for _ in 0..level {
            k = CameraIntrinsics {
                fx: k.fx / 2.0,
                fy: k.fy / 2.0,
                cx: (k.cx - 0.5) / 2.0,
                cy: (k.cy - 0.5) / 2.0,
                width: k.width.div_ceil(2),
                height: k.height.div_ceil(2),
            };
        }
        k
    }

    /// Whether `p` lies in the image window Ω (the hull of pixel centers).
    #[inline]
    pub fn contains(&self, p: Pixel) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Default for CameraIntrinsics {
    /// 640×480 Kinect defaults.
    fn default() -> Self {
        CameraIntrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }
}

/// Continuous image location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

impl Pixel {
    pub const fn new(x: f64, y: f64) -> Self {
        Pixel { x, y }
    }
}

/// 6-DOF motion parameter: translation `v` (meters), rotation `w` (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Twist { v, w }
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Twist {
            v: Vector3::new(a[0], a[1], a[2]),
            w: Vector3::new(a[3], a[4], a[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z]
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Twist::from_array([x[0], x[1], x[2], x[3], x[4], x[5]])
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn exp(&self) -> RigidTransform {
        exp_se3(self)
    }
}

impl std::ops::Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist {
            v: -self.v,
            w: -self.w,
        }
    }
}

/// Rigid-body transform `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform::new(Matrix3::identity(), t)
    }

    /// Builds a transform from a unit quaternion given as `(qx, qy, qz, qw)`.
    pub fn from_quaternion(t: Vector3<f64>, q: [f64; 4]) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]));
        RigidTransform::new(*uq.to_rotation_matrix().matrix(), t)
    }

    /// Rotation as a unit quaternion `(qx, qy, qz, qw)` with `qw ≥ 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let r = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&r);
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -(rt * self.translation))
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let r = &self.rotation;
        let s = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm()
            / 2.0;
        let c = (r.trace() - 1.0) / 2.0;
        s.atan2(c)
    }

    /// Largest absolute entry-wise difference of the 3×4 matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let dr = (self.rotation - other.rotation).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }

    pub fn log(&self) -> Result<Twist> {
        log_se3(self)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }
}

impl Mul for &RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        *self * *rhs
    }
}

#[inline]
pub(crate) fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Closed-form SE(3) exponential.
pub fn exp_se3(xi: &Twist) -> RigidTransform {
    let theta = xi.w.norm();
    let wx = hat(&xi.w);
    let wx2 = wx * wx;
    // R = I + a·W + b·W², V = I + b·W + c·W²
    let (a, b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    let rotation = Matrix3::identity() + wx * a + wx2 * b;
    let v = Matrix3::identity() + wx * b + wx2 * c;
    RigidTransform::new(rotation, v * xi.v)
}

/// SE(3) logarithm. Fails within 1e-3 rad of a half turn, where the rotation
/// axis is ill-conditioned.
pub fn log_se3(t: &RigidTransform) -> Result<Twist> {
    let r = &t.rotation;
    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let theta = t.rotation_angle();
    if (std::f64::consts::PI - theta).abs() < 1e-3 {
        return Err(Error::NearSingularLog { angle: theta });
    }
    let (w, coeff) = if theta < SMALL_ANGLE {
        // θ/(2 sin θ) → 1/2 + θ²/12
        (axis * (0.5 + theta * theta / 12.0), 1.0 / 12.0)
    } else {
        let half_cot = theta * theta.sin() / (2.0 * (1.0 - theta.cos()));
        (
            axis * (theta / (2.0 * theta.sin())),
            (1.0 - half_cot) / (theta * theta),
        )
    };
    let wx = hat(&w);
    let v_inv = Matrix3::identity() - wx * 0.5 + wx * wx * coeff;
    Ok(Twist::new(v_inv * t.translation, w))
}

/// Perspective projection π.
#[inline]
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics) -> Result<Pixel> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera { z: p.z });
    }
    Ok(Pixel::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Inverse projection π⁻¹ at depth `z`.
#[inline]
pub fn unproject(u: Pixel, z: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::InvalidDepth { depth: z });
    }
    Ok(Vector3::new(
        (u.x - k.cx) * z / k.fx,
        (u.y - k.cy) * z / k.fy,
        z,
    ))
}

/// Outcome of warping a single pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warped {
    /// Location in the target image together with the transformed point.
    Inside { pixel: Pixel, point: Vector3<f64> },
    /// The warped location leaves Ω or the point ends up behind the camera.
    OutOfFrame,
    /// The source pixel has no depth.
    InvalidDepth,
}

impl Warped {
    pub fn pixel(&self) -> Option<Pixel> {
        match self {
            Warped::Inside { pixel, .. } => Some(*pixel),
            _ => None,
        }
    }
}

/// Warps pixel `u` observed at depth `z` through `motion`.
#[inline]
pub fn warp_with_depth(u: Pixel, z: f64, motion: &RigidTransform, k: &CameraIntrinsics) -> Warped {
    if !(z > 0.0) {
        return Warped::InvalidDepth;
    }
    if motion.is_identity() {
        // exact: avoids round-off from the unproject/project pair
        let point = match unproject(u, z, k) {
            Ok(p) => p,
            Err(_) => return Warped::InvalidDepth,
        };
        return if k.contains(u) {
            Warped::Inside { pixel: u, point }
        } else {
            Warped::OutOfFrame
        };
    }
    let p = match unproject(u, z, k) {
        Ok(p) => p,
        Err(_) => return Warped::InvalidDepth,
    };
    let q = motion.transform_point(&p);
    match project(&q, k) {
        Ok(pixel) if k.contains(pixel) => Warped::Inside { pixel, point: q },
        _ => Warped::OutOfFrame,
    }
}

/// The warping function w(u, ξ) = π(exp(ξ)·π⁻¹(u, Z(u))), with `motion = exp(ξ)`.
pub fn warp(u: Pixel, depth: &DepthImage, motion: &RigidTransform, k: &CameraIntrinsics) -> Warped {
    match depth.sample(u) {
        Some(z) => warp_with_depth(u, z, motion, k),
        None => Warped::InvalidDepth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    /// Dense matrix exponential of the 4×4 twist matrix by scaling and
    /// squaring a truncated Taylor series.
    fn expm_oracle(xi: &Twist) -> RigidTransform {
        let mut m = nalgebra::Matrix4::<f64>::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&xi.w));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.v);
        let scale = 20;
        let a = m / 2f64.powi(scale);
        let mut term = nalgebra::Matrix4::identity();
        let mut sum = nalgebra::Matrix4::identity();
        for n in 1..20 {
            term = term * a / n as f64;
            sum += term;
        }
        for _ in 0..scale {
            sum = sum * sum;
        }
        RigidTransform::new(
            sum.fixed_view::<3, 3>(0, 0).into_owned(),
            sum.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let t = exp_se3(&Twist::zero());
        assert!(t.is_identity());
    }

    #[test]
    fn exp_of_pure_translation() {
        let t = exp_se3(&Twist::from_array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn exp_quarter_turn_about_z_matches_oracle() {
        let xi = Twist::from_array([0.0, 0.0, 0.0, 0.0, 0.0, FRAC_PI_2]);
        let t = exp_se3(&xi);
        let x = t.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(x, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-9);
        assert!(t.max_abs_diff(&expm_oracle(&xi)) < 1e-9);
    }

    #[test]
    fn exp_matches_oracle_for_general_twists() {
        for xi in [
            [0.1, -0.2, 0.3, 0.01, 0.02, 0.03],
            [0.5, 0.4, -1.0, 0.7, -0.3, 0.9],
            [0.0, 0.0, 1.0, 1e-10, 0.0, 0.0],
        ] {
            let xi = Twist::from_array(xi);
            assert!(exp_se3(&xi).max_abs_diff(&expm_oracle(&xi)) < 1e-9);
        }
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_se3(&RigidTransform::identity()).unwrap(), Twist::zero());
        let xi = Twist::from_array([0.1, -0.2, 0.3, 0.01, 0.02, 0.03]);
        let back = log_se3(&exp_se3(&xi)).unwrap();
        for (a, b) in back.to_array().iter().zip(xi.to_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
        let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 5.0));
        assert_eq!(
            log_se3(&t).unwrap().to_array(),
            [0.0, 0.0, 5.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn log_rejects_half_turn() {
        let xi = Twist::from_array([0.0, 0.0, 0.0, 0.0, std::f64::consts::PI - 5e-4, 0.0]);
        assert!(matches!(
            log_se3(&exp_se3(&xi)),
            Err(Error::NearSingularLog { .. })
        ));
    }

    #[test]
    fn project_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap();
        assert_eq!(
            project(&Vector3::new(0.0, 0.0, 3.0), &k).unwrap(),
            Pixel::new(32.0, 24.0)
        );
        assert_eq!(
            project(&Vector3::new(0.5, 0.25, 1.0), &k).unwrap(),
            Pixel::new(82.0, 49.0)
        );
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, 0.0), &k),
            Err(Error::BehindCamera { .. })
        ));
        let p = unproject(Pixel::new(82.0, 49.0), 1.0, &k).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.5, 0.25, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn unproject_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap();
        assert_eq!(
            unproject(Pixel::new(32.0, 24.0), 2.0, &k).unwrap(),
            Vector3::new(0.0, 0.0, 2.0)
        );
        assert!(matches!(
            unproject(Pixel::new(1.0, 1.0), 0.0, &k),
            Err(Error::InvalidDepth { .. })
        ));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.5, 1.5, 4, 4).is_ok());
    }

    #[test]
    fn warp_identity_and_translation() {
        let k = CameraIntrinsics::centered(50.0, 16, 12);
        let depth = DepthImage::filled(16, 12, 1.0);
        let id = RigidTransform::identity();
        for y in 0..12 {
            for x in 0..16 {
                let u = Pixel::new(x as f64, y as f64);
                assert_eq!(warp(u, &depth, &id, &k).pixel(), Some(u));
            }
        }
        let shift = exp_se3(&Twist::from_array([0.04, 0.0, 0.0, 0.0, 0.0, 0.0]));
        let w = warp(Pixel::new(3.0, 4.0), &depth, &shift, &k)
            .pixel()
            .unwrap();
        assert_abs_diff_eq!(w.x, 3.0 + 50.0 * 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(w.y, 4.0, epsilon = 1e-12);

        let mut holes = DepthImage::filled(16, 12, 1.0);
        holes.set(5, 5, 0.0);
        assert_eq!(
            warp(Pixel::new(5.0, 5.0), &holes, &shift, &k),
            Warped::InvalidDepth
        );
        let far = exp_se3(&Twist::from_array([5.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(
            warp(Pixel::new(5.0, 5.0), &depth, &far, &k),
            Warped::OutOfFrame
        );
    }

    fn twist_in(t: f64, angle: f64) -> impl Strategy<Value = Twist> {
        (
            prop::array::uniform3(-t..t),
            prop::array::uniform3(-1.0f64..1.0),
            0.0..angle,
        )
            .prop_map(|(v, w, a)| {
                let w = Vector3::from(w);
                let w = if w.norm() > 1e-9 {
                    w.normalize() * a
                } else {
                    Vector3::zeros()
                };
                Twist::new(Vector3::from(v), w)
            })
    }

    proptest! {
        #[test]
        fn exp_of_negated_twist_is_inverse(xi in twist_in(0.57, 1.0)) {
            let neg = Twist::new(-xi.v, -xi.w);
            let id = exp_se3(&xi) * exp_se3(&neg);
            prop_assert!(id.max_abs_diff(&RigidTransform::identity()) <= 1e-9);
        }

        #[test]
        fn log_inverts_exp(xi in twist_in(3.0, 3.0)) {
            let back = log_se3(&exp_se3(&xi)).unwrap();
            prop_assert!((back.to_vector() - xi.to_vector()).amax() <= 1e-7);
        }

        #[test]
        fn projection_round_trips(x in 0.0f64..639.0, y in 0.0f64..479.0, z in 0.05f64..20.0) {
            let k = CameraIntrinsics::default();
            let u = Pixel::new(x, y);
            let p = unproject(u, z, &k).unwrap();
            let v = project(&p, &k).unwrap();
            prop_assert!((u.x - v.x).abs() <= 1e-9 && (u.y - v.y).abs() <= 1e-9);
            prop_assert!((unproject(v, p.z, &k).unwrap() - p).amax() <= 1e-9);
        }

        #[test]
        fn warping_back_returns_to_origin(
            xi in twist_in(0.1, 0.1),
            x in 20.0f64..300.0,
            y in 20.0f64..220.0,
            z in 0.5f64..5.0,
        ) {
            let k = CameraIntrinsics::kinect_scaled(320, 240);
            let motion = exp_se3(&xi);
            let back = exp_se3(&log_se3(&motion.inverse()).unwrap());
            let u = Pixel::new(x, y);
            if let Warped::Inside { pixel, point } = warp_with_depth(u, z, &motion, &k) {
                match warp_with_depth(pixel, point.z, &back, &k) {
                    Warped::Inside { pixel: r, .. } => {
                        prop_assert!((r.x - u.x).abs() <= 1e-4 && (r.y - u.y).abs() <= 1e-4);
                    }
                    other => prop_assert!(false, "{:?}", other),
                }
            }
        }
    }
}
