//! Board detection in LiDAR point clouds.
//!
//! The pipeline crops the cloud, registers a model of the holed board to it,
//! keeps the points near the registered model, fits the board plane,
//! rotates it flat, rasterizes it and searches the raster for the holes.

pub mod gicp;
pub mod grid;
pub mod plane;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rot_x, rot_z, Point3, RigidTransform};
use crate::kdtree::KdTree;
use crate::target::{generate_mask_cloud, TargetError, TargetSpec, DEFAULT_MASK_PITCH};
pub use gicp::{gicp_register, GicpResult};
pub use grid::{build_occupancy, find_target_region, refine_circles, OccupancyGrid};
pub use plane::{normalize_plane, ransac_plane, Plane};

pub type PointCloud = Vec<Point3>;

pub const MIN_FILTERED_POINTS: usize = 100;
pub const MIN_MATCHED_POINTS: usize = 50;
/// How far (in cells) the window may slide along a plateau of equal counts.
pub const PLATEAU_REACH: usize = 40;
/// Width of the ring around each hole that must hold returns on all four
/// sides, m.
pub const COVERAGE_BAND: f64 = 0.12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarParams {
    pub h_min: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub gicp_max_iter: usize,
    pub gicp_corr_dist: f64,
    /// Mean squared correspondence distance above which registration fails, m².
    pub gicp_fitness_eps: f64,
    pub nn_delta: f64,
    pub ransac_eps: f64,
    pub ransac_iters: usize,
    /// Cells per meter.
    pub grid_res: f64,
    pub rng_seed: u64,
    pub mask_pitch: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            h_min: 0.05,
            d_min: 0.5,
            d_max: 8.0,
            gicp_max_iter: 64,
            gicp_corr_dist: 0.25,
            gicp_fitness_eps: 1e-3,
            nn_delta: 0.1,
            ransac_eps: 0.02,
            ransac_iters: 500,
            grid_res: 200.0,
            rng_seed: 0,
            mask_pitch: DEFAULT_MASK_PITCH,
        }
    }
}

impl LidarParams {
    pub fn validate(&self) -> Result<(), LidarError> {
        let bad = |m: &str| Err(LidarError::InvalidParams(m.to_string()));
        let positive = [
            ("d_min", self.d_min),
            ("d_max", self.d_max),
            ("gicp_corr_dist", self.gicp_corr_dist),
            ("gicp_fitness_eps", self.gicp_fitness_eps),
            ("nn_delta", self.nn_delta),
            ("ransac_eps", self.ransac_eps),
            ("mask_pitch", self.mask_pitch),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !self.h_min.is_finite() {
            return bad("h_min must be finite");
        }
        if self.d_min >= self.d_max {
            return bad("d_min must be below d_max");
        }
        if !(self.grid_res >= 1.0) {
            return bad("grid_res must be at least 1");
        }
        if self.gicp_max_iter == 0 || self.ransac_iters == 0 {
            return bad("iteration counts must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LidarError {
    #[error("invalid lidar parameters: {0}")]
    InvalidParams(String),
    #[error("only {0} points left after cropping")]
    EmptyAfterFilter(usize),
    #[error("registration did not converge after {iterations} iterations (last step {step_norm:.3e})")]
    NotConverged { iterations: usize, step_norm: f64 },
    #[error("registration fitness {0:.3e} m² above threshold")]
    PoorFit(f64),
    #[error("only {0} points matched the registered board")]
    EmptyMatch(usize),
    #[error("too few or collinear points")]
    DegenerateInput,
    #[error("plane inlier ratio {0:.3} below 0.3")]
    LowInlierRatio(f64),
    #[error("grid of {grid:?} cells is smaller than the {window:?} window")]
    GridTooSmall { grid: (usize, usize), window: (usize, usize) },
    #[error("no hole found for circle {circle} (best mask occupancy {occupied_fraction:.2})")]
    NoVoidFound { circle: usize, occupied_fraction: f64 },
    #[error("circle {circle} is not surrounded by returns on all sides")]
    IncompleteCoverage { circle: usize },
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: Box<LidarError> },
}

impl LidarError {
    /// The innermost error, without stage tags.
    pub fn root(&self) -> &LidarError {
        match self {
            LidarError::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn stage(&self) -> Option<&'static str> {
        match self {
            LidarError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LidarDetection {
    /// Board → LiDAR.
    pub pose: RigidTransform,
    /// Hole centers in the LiDAR frame, canonical order.
    pub centers: [Point3; 4],
    pub fitness: f64,
    pub plane: Plane,
}

pub fn passes_filter(q: &Point3, p: &LidarParams) -> bool {
    let r = q.xy().norm();
    q.z >= p.h_min && p.d_min < r && r <= p.d_max
}

pub fn filter_cloud(c: &[Point3], p: &LidarParams) -> Result<PointCloud, LidarError> {
    let out: PointCloud = c.iter().copied().filter(|q| passes_filter(q, p)).collect();
    if out.len() < MIN_FILTERED_POINTS {
        return Err(LidarError::EmptyAfterFilter(out.len()));
    }
    Ok(out)
}

pub fn match_points(c: &[Point3], model: &[Point3], delta: f64) -> Result<PointCloud, LidarError> {
    if model.is_empty() {
        return Err(LidarError::EmptyMatch(0));
    }
    let tree = KdTree::build(model);
    let out: PointCloud = c.iter().copied().filter(|q| tree.any_within(q, delta)).collect();
    if out.len() < MIN_MATCHED_POINTS {
        return Err(LidarError::EmptyMatch(out.len()));
    }
    Ok(out)
}

fn tag<T>(stage: &'static str, r: Result<T, LidarError>) -> Result<T, LidarError> {
    r.map_err(|e| LidarError::Stage { stage, source: Box::new(e) })
}

/// Rotation that lays the board flat with its x axis along `+x` and its
/// y axis along `+y`, given the plane rotation and a board pose estimate.
fn flatten_rotation(r_plane: &nalgebra::Matrix3<f64>, pose: &RigidTransform) -> nalgebra::Matrix3<f64> {
    let bx = r_plane * pose.rotation.column(0);
    let r_yaw = rot_z(-bx.y.atan2(bx.x));
    let by = r_yaw * r_plane * pose.rotation.column(1);
    let flip = if by.y < 0.0 { rot_x(std::f64::consts::PI) } else { nalgebra::Matrix3::identity() };
    flip * r_yaw * r_plane
}

/// True when the ring `r..r+band` around `center` holds at least one point
/// in each of the four quadrants. A board cut off by the field of view
/// leaves one side of some hole empty.
fn ring_covered(flat: &[Point3], center: [f64; 2], r: f64, band: f64) -> bool {
    let mut seen = [false; 4];
    for q in flat {
        let (dx, dy) = (q.x - center[0], q.y - center[1]);
        let d = dx.hypot(dy);
        if d >= r && d <= r + band {
            let quadrant = match (dx.abs() >= dy.abs(), dx >= 0.0, dy >= 0.0) {
                (true, true, _) => 0,
                (true, false, _) => 2,
                (false, _, true) => 1,
                (false, _, false) => 3,
            };
            seen[quadrant] = true;
        }
    }
    seen.iter().all(|&s| s)
}

/// Pads the grid evenly so a `w × h` window fits.
fn pad_to_window(g: &OccupancyGrid, w: usize, h: usize) -> OccupancyGrid {
    let (px, py) = (w.saturating_sub(g.nx), h.saturating_sub(g.ny));
    if px == 0 && py == 0 {
        return g.clone();
    }
    let (lx, ly) = (px / 2, py / 2);
    let origin = [g.origin[0] - lx as f64 / g.resolution, g.origin[1] - ly as f64 / g.resolution];
    let mut out = OccupancyGrid::empty(origin, g.resolution, g.nx + px, g.ny + py);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if g.get(i, j) {
                out.set(i + lx, j + ly, true);
            }
        }
    }
    out
}

pub fn detect_target_lidar(c: &[Point3], spec: &TargetSpec, t_init: &RigidTransform, p: &LidarParams) -> Result<LidarDetection, LidarError> {
    p.validate()?;
    let mask = generate_mask_cloud(spec, p.mask_pitch)?;
    let filtered = tag("filter", filter_cloud(c, p))?;
    let reg = tag("gicp", gicp_register(&mask.points, &filtered, t_init, p))?;
    let model: PointCloud = mask.points.iter().map(|q| reg.transform.transform_point(q)).collect();
    let matched = tag("match", match_points(&filtered, &model, p.nn_delta))?;
    let (pl, inliers) = tag("ransac", ransac_plane(&matched, p))?;
    let (_, plane_tf) = normalize_plane(&inliers, &pl);

    let r_flat = flatten_rotation(&plane_tf.rotation, &reg.transform);
    let flat: PointCloud = inliers.iter().map(|q| r_flat * q).collect();
    let s = (r_flat * pl.normal()).z;
    let z0 = -pl.d * s;

    let raw = build_occupancy(&flat, p.grid_res);
    let (w, h) = grid::window_cells(&raw, spec.board_width, spec.board_height);
    let g = pad_to_window(&raw, w, h);
    let first = tag("window", find_target_region(&g, spec.board_width, spec.board_height))?;
    let window = tag("window", grid::plateau_center(&g, spec.board_width, spec.board_height, first, PLATEAU_REACH))?;
    let cells = tag("circles", refine_circles(&g, window, spec))?;
    for (k, &[u, v]) in cells.iter().enumerate() {
        let m = g.to_metric(u, v);
        if !ring_covered(&flat, m, spec.circle_radius, COVERAGE_BAND) {
            return Err(LidarError::Stage { stage: "coverage", source: Box::new(LidarError::IncompleteCoverage { circle: k }) });
        }
    }

    let centers = cells.map(|[u, v]| {
        let m = g.to_metric(u, v);
        r_flat.transpose() * Vector3::new(m[0], m[1], z0)
    });
    Ok(LidarDetection { pose: reg.transform, centers, fitness: reg.fitness, plane: pl })
}

/// A starting pose for registration derived from the cloud alone: the
/// dominant plane in front of the sensor, board x along the horizontal in
/// that plane and board z facing the sensor.
pub fn auto_init(c: &[Point3], p: &LidarParams) -> Result<RigidTransform, LidarError> {
    let filtered = tag("filter", filter_cloud(c, p))?;
    let (pl, inliers) = tag("ransac", ransac_plane(&filtered, p))?;
    let centroid = inliers.iter().fold(Point3::zeros(), |a, q| a + q) / inliers.len() as f64;
    let mut z = pl.normal();
    if z.dot(&centroid) > 0.0 {
        z = -z;
    }
    let up = Vector3::z();
    let mut x = up.cross(&z);
    if x.norm() < 1e-6 {
        x = Vector3::x();
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = nalgebra::Matrix3::from_columns(&[x, y, z]);
    Ok(RigidTransform::new(r, centroid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        (0..n).map(|_| Point3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-1.0..3.0))).collect()
    }

    #[test]
    fn filter_boundaries() {
        let p = LidarParams::default();
        let mut c: PointCloud = (0..200).map(|i| Point3::new(2.0 + i as f64 * 0.01, 0.0, 1.0)).collect();
        c.push(Point3::new(2.0, 0.0, 0.0));
        c.push(Point3::new(p.d_min, 0.0, 1.0));
        c.push(Point3::new(p.d_max, 0.0, 1.0));
        let f = filter_cloud(&c, &p).unwrap();
        assert_eq!(f.len(), 201);
        assert_eq!(*f.last().unwrap(), Point3::new(p.d_max, 0.0, 1.0));
    }

    #[test]
    fn filter_matches_predicate_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let p = LidarParams::default();
        for _ in 0..20 {
            let c = random_cloud(&mut rng, 2000);
            let expect: PointCloud = c
                .iter()
                .copied()
                .filter(|q| {
                    let r = (q.x * q.x + q.y * q.y).sqrt();
                    q.z >= 0.05 && r > 0.5 && r <= 8.0
                })
                .collect();
            assert_eq!(filter_cloud(&c, &p).unwrap(), expect);
        }
        assert_eq!(filter_cloud(&[Point3::new(1.0, 0.0, 1.0)], &p), Err(LidarError::EmptyAfterFilter(1)));
    }

    #[test]
    fn match_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..10 {
            let c = random_cloud(&mut rng, 1500);
            let model: PointCloud = (0..800).map(|_| Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..2.0))).collect();
            let expect: PointCloud = c.iter().copied().filter(|q| model.iter().any(|m| (q - m).norm() < 0.3)).collect();
            match match_points(&c, &model, 0.3) {
                Ok(got) => assert_eq!(got, expect),
                Err(LidarError::EmptyMatch(n)) => assert_eq!(n, expect.len()),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn match_is_strict() {
        let model: PointCloud = (0..60).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let mut c = model.clone();
        c.push(Point3::new(0.0, 0.25, 0.0));
        let got = match_points(&c, &model, 0.25).unwrap();
        assert_eq!(got, model);
    }

    #[test]
    fn stage_tag_unwraps() {
        let e = tag::<()>("gicp", Err(LidarError::PoorFit(1.0))).unwrap_err();
        assert_eq!(e.stage(), Some("gicp"));
        assert_eq!(e.root(), &LidarError::PoorFit(1.0));
    }

    #[test]
    fn params_validation() {
        assert!(LidarParams::default().validate().is_ok());
        assert!(LidarParams { d_min: 9.0, ..LidarParams::default() }.validate().is_err());
        assert!(LidarParams { grid_res: 0.5, ..LidarParams::default() }.validate().is_err());
    }
}
