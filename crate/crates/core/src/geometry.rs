//! Rigid-body arithmetic and the pinhole camera model.
//!
//! Poses are stored as a rotation matrix plus translation. `a.compose(&b)`
//! applies `b` first, then `a`, i.e. the homogeneous product `a · b`.
//! A transform named `T_x_y` in this crate maps coordinates expressed in
//! frame `x` into frame `y`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = Vector3<f64>;
pub type Pixel = Vector2<f64>;

/// Smallest depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("point at depth {0} is behind or on the camera plane")]
    NonPositiveDepth(f64),
    #[error("rotation angle {0} rad is too close to pi for a stable logarithm")]
    NearPiRotation(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self { rotation, translation: Vector3::zeros() }
    }

    /// Returns `self · other`: `other` is applied first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Takes the upper 3×4 block; the bottom row is ignored.
    pub fn from_matrix4(m: &Matrix4<f64>) -> RigidTransform {
        RigidTransform {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    /// Largest absolute entry of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.orthonormality_error() < tol
            && (self.rotation.determinant() - 1.0).abs() < tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// SE(3) exponential. The tangent vector is laid out as
    /// `(translation part, rotation part)`.
    pub fn exp(xi: &Vector6<f64>) -> RigidTransform {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let omega = Vector3::new(xi[3], xi[4], xi[5]);
        let theta = omega.norm();
        let w = skew(&omega);
        let w2 = w * w;
        let (a, b, c) = if theta < 1e-5 {
            let t2 = theta * theta;
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            let t2 = theta * theta;
            (theta.sin() / theta, (1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
        };
        let rotation = Matrix3::identity() + w * a + w2 * b;
        let v = Matrix3::identity() + w * b + w2 * c;
        RigidTransform { rotation, translation: v * rho }
    }

    /// SE(3) logarithm, inverse of [`RigidTransform::exp`].
    pub fn log(&self) -> Result<Vector6<f64>, GeometryError> {
        let omega = so3_log(&self.rotation)?;
        let theta = omega.norm();
        let w = skew(&omega);
        let w2 = w * w;
        let coeff = if theta < 1e-5 {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - w * 0.5 + w2 * coeff;
        let rho = v_inv * self.translation;
        Ok(Vector6::new(rho[0], rho[1], rho[2], omega[0], omega[1], omega[2]))
    }

    /// Rotation angle of this transform in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    RigidTransform::exp(&Vector6::new(0.0, 0.0, 0.0, omega[0], omega[1], omega[2])).rotation
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = 0.5
        * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Axis-angle vector of a rotation with angle below `π − 1e-6`.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = 0.5 * vee.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta >= std::f64::consts::PI - 1e-6 {
        return Err(GeometryError::NearPiRotation(theta));
    }
    if theta < 1e-8 {
        return Ok(0.5 * vee);
    }
    Ok(vee * (theta / (2.0 * s)))
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Projects a 3×3 matrix onto the closest rotation (Frobenius norm).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

/// Intrinsic X-Y-Z Euler angles in degrees: `R = Rx(rx) · Ry(ry) · Rz(rz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerXyz {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    /// Set when `|cos(ry)| < 1e-9`; `rz` is then reported as 0.
    pub gimbal_lock: bool,
}

impl EulerXyz {
    pub fn degrees(&self) -> [f64; 3] {
        [self.rx, self.ry, self.rz]
    }
}

pub fn euler_xyz_from_rotation(r: &Matrix3<f64>) -> EulerXyz {
    let cos_ry = (r[(0, 0)] * r[(0, 0)] + r[(0, 1)] * r[(0, 1)]).sqrt();
    let ry = r[(0, 2)].atan2(cos_ry);
    if cos_ry < 1e-9 {
        let rx = r[(2, 1)].atan2(r[(1, 1)]);
        return EulerXyz { rx: rx.to_degrees(), ry: ry.to_degrees(), rz: 0.0, gimbal_lock: true };
    }
    let rx = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let rz = (-r[(0, 1)]).atan2(r[(0, 0)]);
    EulerXyz { rx: rx.to_degrees(), ry: ry.to_degrees(), rz: rz.to_degrees(), gimbal_lock: false }
}

pub fn rotation_from_euler_xyz(rx_deg: f64, ry_deg: f64, rz_deg: f64) -> Matrix3<f64> {
    rot_x(rx_deg.to_radians()) * rot_y(ry_deg.to_radians()) * rot_z(rz_deg.to_radians())
}

/// Pinhole intrinsics. Images are assumed rectified (no distortion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics("cx outside image"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("cy outside image"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width as f64).powi(2) + (self.height as f64).powi(2)).sqrt()
    }
}

/// `u = fx·X/Z + cx`, `v = fy·Y/Z + cy`.
pub fn project(k: &Intrinsics, p_cam: &Point3) -> Result<Pixel, GeometryError> {
    if p_cam.z <= MIN_DEPTH {
        return Err(GeometryError::NonPositiveDepth(p_cam.z));
    }
    Ok(Pixel::new(k.fx * p_cam.x / p_cam.z + k.cx, k.fy * p_cam.y / p_cam.z + k.cy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let angle = rng.random_range(0.0..3.0);
        let rotation = so3_exp(&(axis.normalize() * angle));
        let translation = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        RigidTransform::new(rotation, translation)
    }

    fn max_abs_diff4(a: &Matrix4<f64>, b: &Matrix4<f64>) -> f64 {
        (a - b).abs().max()
    }

    #[test]
    fn compose_identity_and_inverse() {
        let i = RigidTransform::identity();
        assert_eq!(i.compose(&i), i);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_transform(&mut rng);
        let e = t.compose(&t.inverse());
        assert!(max_abs_diff4(&e.to_matrix4(), &Matrix4::identity()) < 1e-9);
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            // Oracle: explicit 4x4 product, entry by entry.
            let (ma, mb) = (a.to_matrix4(), b.to_matrix4());
            let mut oracle = Matrix4::zeros();
            for r in 0..4 {
                for c in 0..4 {
                    oracle[(r, c)] = (0..4).map(|k| ma[(r, k)] * mb[(k, c)]).sum();
                }
            }
            assert!(max_abs_diff4(&a.compose(&b).to_matrix4(), &oracle) < 1e-9);
        }
    }

    #[test]
    fn invert_cases() {
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0)).inverse();
        assert_eq!(t.translation, Vector3::new(-1.0, -2.0, -3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let oracle = t.to_matrix4().try_inverse().unwrap();
            assert!(max_abs_diff4(&t.inverse().to_matrix4(), &oracle) < 1e-9);
        }
    }

    #[test]
    fn transform_point_cases() {
        let p = Vector3::new(0.3, -1.2, 4.0);
        assert_eq!(RigidTransform::identity().transform_point(&p), p);
        let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(t.transform_point(&Vector3::zeros()), Vector3::new(0.0, 0.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let p = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let h = t.to_matrix4() * nalgebra::Vector4::new(p.x, p.y, p.z, 1.0);
            assert!((t.transform_point(&p) - h.xyz()).norm() < 1e-9);
        }
    }

    #[test]
    fn associativity_and_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (a, b, c) = (random_transform(&mut rng), random_transform(&mut rng), random_transform(&mut rng));
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!(max_abs_diff4(&l.to_matrix4(), &r.to_matrix4()) < 1e-9);
            assert!((l.rotation.determinant() - 1.0).abs() < 1e-9);
            assert!(l.is_valid(1e-9));
        }
    }

    #[test]
    fn project_cases() {
        let k = Intrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };
        assert_eq!(project(&k, &Vector3::new(0.0, 0.0, 7.0)).unwrap(), Pixel::new(320.0, 240.0));
        // 500 * 1/10 + 320 = 370, 500 * 2/10 + 240 = 340
        let px = project(&k, &Vector3::new(1.0, 2.0, 10.0)).unwrap();
        assert!((px - Pixel::new(370.0, 340.0)).norm() < 1e-12);
        assert!(matches!(project(&k, &Vector3::new(1.0, 1.0, 0.0)), Err(GeometryError::NonPositiveDepth(_))));
        assert!(matches!(project(&k, &Vector3::new(1.0, 1.0, -2.0)), Err(GeometryError::NonPositiveDepth(_))));
    }

    #[test]
    fn project_matches_homogeneous_product() {
        let k = Intrinsics { fx: 612.0, fy: 608.0, cx: 640.0, cy: 400.0, width: 1280, height: 800 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pi_c = nalgebra::Matrix3x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let mut checked = 0;
        while checked < 100 {
            let t = random_transform(&mut rng);
            let x = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let pc = t.transform_point(&x);
            if pc.z < 0.1 {
                continue;
            }
            let h = k.matrix() * pi_c * t.to_matrix4() * nalgebra::Vector4::new(x.x, x.y, x.z, 1.0);
            let oracle = Pixel::new(h.x / h.z, h.y / h.z);
            assert!((project(&k, &pc).unwrap() - oracle).norm() < 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn intrinsics_validation() {
        let good = Intrinsics { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 };
        assert!(good.validate().is_ok());
        assert!(Intrinsics { fx: 0.0, ..good }.validate().is_err());
        assert!(Intrinsics { cx: 640.0, ..good }.validate().is_err());
        assert!(Intrinsics { cy: -1.0, ..good }.validate().is_err());
    }

    #[test]
    fn euler_identity_and_table_row() {
        let e = euler_xyz_from_rotation(&Matrix3::identity());
        assert_eq!(e.degrees(), [0.0, 0.0, 0.0]);
        let r = rotation_from_euler_xyz(110.80, -1.609, -87.738);
        let e = euler_xyz_from_rotation(&r);
        assert!((e.rx - 110.80).abs() < 1e-9);
        assert!((e.ry + 1.609).abs() < 1e-9);
        assert!((e.rz + 87.738).abs() < 1e-9);
        assert!(!e.gimbal_lock);
    }

    #[test]
    fn euler_random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let r = random_transform(&mut rng).rotation;
            let e = euler_xyz_from_rotation(&r);
            let r2 = rotation_from_euler_xyz(e.rx, e.ry, e.rz);
            assert!((r - r2).abs().max() < 1e-9);
            let e2 = euler_xyz_from_rotation(&r2);
            assert!((e.rx - e2.rx).abs() < 1e-9 && (e.ry - e2.ry).abs() < 1e-9 && (e.rz - e2.rz).abs() < 1e-9);
        }
    }

    #[test]
    fn euler_gimbal_lock_flag() {
        let r = rotation_from_euler_xyz(30.0, 90.0, 0.0);
        let e = euler_xyz_from_rotation(&r);
        assert!(e.gimbal_lock);
        assert_eq!(e.rz, 0.0);
        assert!((rotation_from_euler_xyz(e.rx, e.ry, e.rz) - r).abs().max() < 1e-9);
    }

    #[test]
    fn exp_log_cases() {
        assert_eq!(RigidTransform::exp(&Vector6::zeros()), RigidTransform::identity());
        let t = RigidTransform::exp(&Vector6::new(0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        assert!((t.rotation - rot_x(std::f64::consts::FRAC_PI_2)).abs().max() < 1e-12);
        let near_pi = RigidTransform::from_rotation(rot_z(std::f64::consts::PI - 1e-7));
        assert!(matches!(near_pi.log(), Err(GeometryError::NearPiRotation(_))));
    }

    #[test]
    fn exp_log_round_trip_1000() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in 0..1000 {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            // include tiny angles to exercise the series branches
            let angle = if i % 10 == 0 { rng.random_range(1e-9..1e-4) } else { rng.random_range(1e-4..std::f64::consts::PI - 0.01) };
            let w = axis * angle;
            let xi = Vector6::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), w.x, w.y, w.z);
            let t = RigidTransform::exp(&xi);
            assert!(t.is_valid(1e-9));
            let back = t.log().unwrap();
            let t2 = RigidTransform::exp(&back);
            assert!(max_abs_diff4(&t.to_matrix4(), &t2.to_matrix4()) < 1e-9);
            assert!((back - xi).norm() < 1e-9 * (1.0 + xi.norm()));
        }
    }

    #[test]
    fn orthonormalize_fixes_drift() {
        let r = rot_z(0.3) * rot_x(-0.2);
        let noisy = r + Matrix3::from_element(1e-4);
        let fixed = orthonormalize(&noisy);
        assert!(RigidTransform::from_rotation(fixed).is_valid(1e-12));
        assert!((fixed - r).abs().max() < 1e-3);
    }
}
