//! RANSAC plane segmentation and plane-to-horizontal normalization.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LidarError, LidarParams};
use crate::geometry::{self, Point3, RigidTransform};

/// `a·x + b·y + c·z + d = 0` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Plane {
    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal().dot(p) + self.d
    }

    /// Normalizes the coefficients and orients the normal so that `c ≥ 0`
    /// (ties: `b ≥ 0`, then `a ≥ 0`).
    pub fn from_normal_offset(n: Vector3<f64>, d: f64) -> Plane {
        let norm = n.norm();
        let (mut n, mut d) = (n / norm, d / norm);
        let flip = if n.z.abs() > 1e-12 {
            n.z < 0.0
        } else if n.y.abs() > 1e-12 {
            n.y < 0.0
        } else {
            n.x < 0.0
        };
        if flip {
            n = -n;
            d = -d;
        }
        Plane { a: n.x, b: n.y, c: n.z, d }
    }

    /// Total least-squares fit; `None` for fewer than 3 points or collinear
    /// input.
    pub fn fit(points: &[Point3]) -> Option<Plane> {
        if points.len() < 3 {
            return None;
        }
        let mean = points.iter().fold(Point3::zeros(), |a, p| a + p) / points.len() as f64;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p - mean;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let (mid, hi) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
        if hi <= 0.0 || mid <= 1e-12 * hi {
            return None;
        }
        let n = eig.eigenvectors.column(order[0]).into_owned();
        Some(Plane::from_normal_offset(n, -n.dot(&mean)))
    }
}

fn is_collinear(points: &[Point3]) -> bool {
    Plane::fit(points).is_none()
}

pub fn ransac_plane(pts: &[Point3], p: &LidarParams) -> Result<(Plane, Vec<Point3>), LidarError> {
    if pts.len() < 3 || is_collinear(pts) {
        return Err(LidarError::DegenerateInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let n = pts.len();
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..p.ransac_iters.max(1) {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let normal = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
        if normal.norm() < 1e-12 {
            continue;
        }
        let plane = Plane::from_normal_offset(normal, -normal.dot(&pts[i]));
        let count = pts.iter().filter(|q| plane.signed_distance(q).abs() < p.ransac_eps).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, plane));
        }
    }
    let (_, consensus) = best.ok_or(LidarError::DegenerateInput)?;
    let inliers: Vec<Point3> = pts.iter().copied().filter(|q| consensus.signed_distance(q).abs() < p.ransac_eps).collect();
    let refit = Plane::fit(&inliers).unwrap_or(consensus);
    let inliers: Vec<Point3> = pts.iter().copied().filter(|q| refit.signed_distance(q).abs() < p.ransac_eps).collect();
    let ratio = inliers.len() as f64 / n as f64;
    if ratio < 0.3 {
        return Err(LidarError::LowInlierRatio(ratio));
    }
    Ok((refit, inliers))
}

/// Rotation taking the plane normal to `+z`.
///
/// For `c ≥ 0.1` this is `Rx(θx)·Ry(θy)` with `θy = −atan(a/c)` and
/// `θx = atan(b/√(a²+c²))`; the latter reduces to `atan(b/c)` when `a = 0`
/// and keeps the mapping exact otherwise. Near-vertical planes use the
/// shortest rotation instead.
pub fn plane_rotation(pl: &Plane) -> Matrix3<f64> {
    let (a, b, c) = (pl.a, pl.b, pl.c);
    if c >= 0.1 {
        let theta_y = -(a / c).atan();
        let theta_x = (b / (a * a + c * c).sqrt()).atan();
        return geometry::rot_x(theta_x) * geometry::rot_y(theta_y);
    }
    let n = pl.normal().normalize();
    let ez = Vector3::z();
    let axis = n.cross(&ez);
    let s = axis.norm();
    let cos = n.dot(&ez);
    if s < 1e-15 {
        return if cos > 0.0 { Matrix3::identity() } else { geometry::rot_x(std::f64::consts::PI) };
    }
    geometry::so3_exp(&(axis / s * s.atan2(cos)))
}

pub fn normalize_plane(inliers: &[Point3], pl: &Plane) -> (Vec<Point3>, RigidTransform) {
    let r = plane_rotation(pl);
    (inliers.iter().map(|p| r * p).collect(), RigidTransform::from_rotation(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn params() -> LidarParams {
        LidarParams::default()
    }

    #[test]
    fn exact_horizontal_plane() {
        let pts: Vec<Point3> = (0..10).flat_map(|i| (0..10).map(move |j| Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0))).collect();
        let (pl, inl) = ransac_plane(&pts, &params()).unwrap();
        assert!((pl.a).abs() < 1e-12 && (pl.b).abs() < 1e-12 && (pl.c - 1.0).abs() < 1e-12 && pl.d.abs() < 1e-12);
        assert_eq!(inl.len(), 100);
    }

    #[test]
    fn recovers_plane_with_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..20 {
            let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let truth = Plane::from_normal_offset(n, rng.random_range(-2.0..2.0));
            let u = truth.normal().cross(&Vector3::new(0.3, 0.5, 0.8)).normalize();
            let v = truth.normal().cross(&u);
            let origin = -truth.normal() * truth.d;
            let mut pts = Vec::new();
            for _ in 0..800 {
                pts.push(origin + u * rng.random_range(-1.0..1.0) + v * rng.random_range(-1.0..1.0) + truth.normal() * rng.random_range(-0.005..0.005));
            }
            for _ in 0..200 {
                pts.push(origin + Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)));
            }
            let p = LidarParams { rng_seed: trial, ..params() };
            let (pl, inliers) = ransac_plane(&pts, &p).unwrap();
            let angle = pl.normal().dot(&truth.normal()).abs().min(1.0).acos().to_degrees();
            assert!(angle < 0.5, "angle {angle}");
            assert!(inliers.iter().all(|q| pl.signed_distance(q).abs() < p.ransac_eps));
            let outliers_kept = pts[800..].iter().filter(|q| inliers.contains(q)).count();
            let near_plane = pts[800..].iter().filter(|q| truth.signed_distance(q).abs() < p.ransac_eps + 0.005).count();
            assert!(outliers_kept <= near_plane, "kept {outliers_kept} outliers, only {near_plane} lie near the plane");
        }
    }

    #[test]
    fn degenerate_inputs() {
        let two = vec![Point3::zeros(), Point3::x()];
        assert_eq!(ransac_plane(&two, &params()), Err(LidarError::DegenerateInput));
        let line: Vec<Point3> = (0..20).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert_eq!(ransac_plane(&line, &params()), Err(LidarError::DegenerateInput));
    }

    #[test]
    fn low_inlier_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let pts: Vec<Point3> = (0..300).map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        assert!(matches!(ransac_plane(&pts, &params()), Err(LidarError::LowInlierRatio(_))));
    }

    #[test]
    fn normalize_cases() {
        let flat = Plane { a: 0.0, b: 0.0, c: 1.0, d: -0.7 };
        assert_eq!(plane_rotation(&flat), Matrix3::identity());
        let th = 20f64.to_radians();
        let tilted = Plane { a: 0.0, b: th.sin(), c: th.cos(), d: 0.0 };
        // θx = atan(b/c) = 20°, θy = 0
        let expect = geometry::rot_x(th);
        assert!((plane_rotation(&tilted) - expect).abs().max() < 1e-12);
        let vertical = Plane { a: 1.0, b: 0.0, c: 0.0, d: 0.0 };
        let r = plane_rotation(&vertical);
        assert!((r * vertical.normal() - Vector3::z()).norm() < 1e-9);
    }

    #[test]
    fn normalize_maps_any_normal_to_ez() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..1000 {
            let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if n.norm() < 1e-3 {
                continue;
            }
            let pl = Plane::from_normal_offset(n, rng.random_range(-3.0..3.0));
            let r = plane_rotation(&pl);
            assert!((r * pl.normal() - Vector3::z()).norm() < 1e-9);
            assert!(RigidTransform::from_rotation(r).is_valid(1e-9));
        }
    }

    #[test]
    fn rotated_inliers_are_flat() {
        let pl = Plane::from_normal_offset(Vector3::new(0.9, 0.1, 0.05), 1.2);
        let u = pl.normal().cross(&Vector3::z()).normalize();
        let v = pl.normal().cross(&u);
        let pts: Vec<Point3> = (0..50).map(|i| -pl.normal() * pl.d + u * (i as f64 * 0.02) + v * ((i % 7) as f64 * 0.05)).collect();
        let (flat, t) = normalize_plane(&pts, &pl);
        let zs: Vec<f64> = flat.iter().map(|p| p.z).collect();
        let extent = zs.iter().cloned().fold(f64::MIN, f64::max) - zs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(extent < 2.0 * LidarParams::default().ransac_eps);
        assert_eq!(t.translation, Vector3::zeros());
    }
}
