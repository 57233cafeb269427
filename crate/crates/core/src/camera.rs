//! Board pose from checker-corner detections, and the circle centers that
//! follow from it.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, orthonormalize, project, GeometryError, Intrinsics, Pixel, Point3, RigidTransform};
use crate::lm::{self, LeastSquares, LmConfig};
use crate::target::TargetSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("need at least 4 corners, got {0}")]
    InsufficientCorners(usize),
    #[error("corner board positions are collinear")]
    DegenerateConfiguration,
    #[error("no pose places every corner in front of the camera")]
    BehindCamera,
    #[error("corner id {0} does not exist on the board")]
    UnknownCorner(u32),
    #[error("corner id {0} observed twice")]
    DuplicateCorner(u32),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerObservation {
    pub id: u32,
    pub pixel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraDetection {
    /// Board → camera.
    pub pose: RigidTransform,
    pub centers_3d: [Point3; 4],
    pub centers_2d: [Pixel; 4],
    pub reprojection_error: f64,
    pub corners_used: usize,
}

const PNP_GRADIENT_TOL: f64 = 1e-10;
const PNP_MAX_ITER: usize = 100;

struct PnpProblem<'a> {
    board: &'a [Point3],
    pixels: &'a [Pixel],
    k: &'a Intrinsics,
}

impl LeastSquares for PnpProblem<'_> {
    type State = RigidTransform;

    fn residuals(&self, pose: &RigidTransform) -> DVector<f64> {
        let mut r = DVector::zeros(2 * self.board.len());
        for (i, (x, u)) in self.board.iter().zip(self.pixels).enumerate() {
            match project(self.k, &pose.transform_point(x)) {
                Ok(p) => {
                    r[2 * i] = p.x - u.x;
                    r[2 * i + 1] = p.y - u.y;
                }
                Err(_) => {
                    // Penalise poses that put corners behind the camera.
                    r[2 * i] = 1e6;
                    r[2 * i + 1] = 1e6;
                }
            }
        }
        r
    }

    fn jacobian(&self, pose: &RigidTransform) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2 * self.board.len(), 6);
        for (i, x) in self.board.iter().enumerate() {
            let p = pose.transform_point(x);
            let block = projection_jacobian(self.k, &p) * point_perturbation_jacobian(&p);
            j.view_mut((2 * i, 0), (2, 6)).copy_from(&block);
        }
        j
    }

    fn retract(&self, pose: &RigidTransform, delta: &DVector<f64>) -> RigidTransform {
        let xi = nalgebra::Vector6::from_iterator(delta.iter().copied());
        RigidTransform::exp(&xi).compose(pose)
    }
}

/// d(pixel)/d(camera point).
pub(crate) fn projection_jacobian(k: &Intrinsics, p: &Point3) -> SMatrix<f64, 2, 3> {
    let z = p.z.max(geometry::MIN_DEPTH);
    let iz = 1.0 / z;
    SMatrix::<f64, 2, 3>::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz, 0.0, k.fy * iz, -k.fy * p.y * iz * iz)
}

/// d(exp(δ)·p)/dδ at δ = 0 for δ = (translation, rotation).
pub(crate) fn point_perturbation_jacobian(p: &Point3) -> SMatrix<f64, 3, 6> {
    let mut m = SMatrix::<f64, 3, 6>::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-geometry::skew(p)));
    m
}

fn gather(corners: &[CornerObservation], spec: &TargetSpec) -> Result<(Vec<Point3>, Vec<Pixel>), CameraError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut board = Vec::with_capacity(corners.len());
    let mut pixels = Vec::with_capacity(corners.len());
    for c in corners {
        let x = spec.corner_position(c.id).ok_or(CameraError::UnknownCorner(c.id))?;
        if !seen.insert(c.id) {
            return Err(CameraError::DuplicateCorner(c.id));
        }
        board.push(x);
        pixels.push(Pixel::new(c.pixel[0], c.pixel[1]));
    }
    if board.len() < 4 {
        return Err(CameraError::InsufficientCorners(board.len()));
    }
    Ok((board, pixels))
}

fn is_collinear(board: &[Point3]) -> bool {
    let n = board.len() as f64;
    let mean = board.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in board {
        let d = p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let small = 0.5 * tr - disc;
    let large = 0.5 * tr + disc;
    large <= 0.0 || small <= 1e-10 * large
}

/// Normalized DLT homography mapping board (X, Y, 1) to normalized image
/// coordinates (K⁻¹ u).
fn homography(board: &[Point3], rays: &[nalgebra::Vector2<f64>]) -> Option<Matrix3<f64>> {
    fn normalizer(pts: &[nalgebra::Vector2<f64>]) -> Matrix3<f64> {
        let n = pts.len() as f64;
        let mean = pts.iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p) / n;
        let spread = pts.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
        let s = if spread > 0.0 { std::f64::consts::SQRT_2 / spread } else { 1.0 };
        Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
    }
    let src: Vec<_> = board.iter().map(|p| nalgebra::Vector2::new(p.x, p.y)).collect();
    let ns = normalizer(&src);
    let nd = normalizer(rays);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (s, d) in src.iter().zip(rays) {
        let a = ns * Vector3::new(s.x, s.y, 1.0);
        let b = nd * Vector3::new(d.x, d.y, 1.0);
        let r1 = SMatrix::<f64, 1, 9>::from_row_slice(&[0.0, 0.0, 0.0, -a.x, -a.y, -1.0, b.y * a.x, b.y * a.y, b.y]);
        let r2 = SMatrix::<f64, 1, 9>::from_row_slice(&[a.x, a.y, 1.0, 0.0, 0.0, 0.0, -b.x * a.x, -b.x * a.y, -b.x]);
        ata += r1.transpose() * r1 + r2.transpose() * r2;
    }
    let eig = ata.symmetric_eigen();
    let min = eig.eigenvalues.imin();
    let h = eig.eigenvectors.column(min);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let h = nd.try_inverse()? * hn * ns;
    h.iter().all(|v| v.is_finite()).then_some(h)
}

fn pose_from_homography(h: &Matrix3<f64>) -> RigidTransform {
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let mut scale = 2.0 / (h1.norm() + h2.norm());
    if h3.z * scale < 0.0 {
        scale = -scale;
    }
    let r1 = h1 * scale;
    let r2 = h2 * scale;
    let r3 = r1.cross(&r2);
    let rotation = orthonormalize(&Matrix3::from_columns(&[r1, r2, r3]));
    RigidTransform::new(rotation, h3 * scale)
}

/// The mirror candidate of a planar pose: the board normal reflected about
/// the line of sight through the board origin.
fn mirror_candidate(pose: &RigidTransform) -> RigidTransform {
    let v = pose.translation.normalize();
    let n1 = pose.rotation.column(2).into_owned();
    let n2 = v * (2.0 * n1.dot(&v)) - n1;
    let axis = n1.cross(&n2);
    let s = axis.norm();
    let c = n1.dot(&n2);
    let align = if s < 1e-12 { Matrix3::identity() } else { geometry::so3_exp(&(axis / s * s.atan2(c))) };
    RigidTransform::new(align * pose.rotation, pose.translation)
}

fn refine(problem: &PnpProblem, init: RigidTransform) -> (RigidTransform, f64) {
    let cfg = LmConfig { max_iter: PNP_MAX_ITER, lambda_init: 1e-3, gradient_tol: PNP_GRADIENT_TOL, step_tol: 1e-15 };
    let rep = lm::minimize(problem, init, &cfg);
    let rms = (2.0 * rep.final_cost / problem.board.len() as f64).sqrt();
    (rep.state, rms)
}

fn all_in_front(pose: &RigidTransform, board: &[Point3]) -> bool {
    board.iter().all(|x| pose.transform_point(x).z > geometry::MIN_DEPTH)
}

/// Both refined planar candidates, in the order (homography, mirror), each
/// with its RMS reprojection error.
pub fn pnp_candidates(corners: &[CornerObservation], spec: &TargetSpec, k: &Intrinsics) -> Result<[(RigidTransform, f64); 2], CameraError> {
    let (board, pixels) = gather(corners, spec)?;
    if is_collinear(&board) {
        return Err(CameraError::DegenerateConfiguration);
    }
    let kinv = k.matrix().try_inverse().ok_or(GeometryError::InvalidIntrinsics("singular K"))?;
    let rays: Vec<_> = pixels.iter().map(|u| (kinv * Vector3::new(u.x, u.y, 1.0)).xy()).collect();
    let h = homography(&board, &rays).ok_or(CameraError::DegenerateConfiguration)?;
    let init = pose_from_homography(&h);
    let problem = PnpProblem { board: &board, pixels: &pixels, k };
    Ok([refine(&problem, init), refine(&problem, mirror_candidate(&init))])
}

fn faces_camera(pose: &RigidTransform) -> bool {
    pose.rotation.column(2).dot(&pose.translation) < 0.0
}

/// Board → camera pose minimizing pixel reprojection error.
pub fn solve_pnp(corners: &[CornerObservation], spec: &TargetSpec, k: &Intrinsics) -> Result<RigidTransform, CameraError> {
    let (board, _) = gather(corners, spec)?;
    let cands = pnp_candidates(corners, spec, k)?;
    let valid: Vec<_> = cands.iter().filter(|(p, _)| all_in_front(p, &board)).collect();
    let best = match valid.as_slice() {
        [] => return Err(CameraError::BehindCamera),
        [only] => only,
        [a, b, ..] => {
            let tie = (a.1 - b.1).abs() <= 1e-9 * (1.0 + a.1.max(b.1));
            if tie {
                if faces_camera(&b.0) && !faces_camera(&a.0) { b } else { a }
            } else if b.1 < a.1 {
                b
            } else {
                a
            }
        }
    };
    Ok(best.0)
}

pub fn derive_circle_centers(pose: &RigidTransform, spec: &TargetSpec, k: &Intrinsics) -> Result<([Point3; 4], [Pixel; 4]), GeometryError> {
    let c3 = spec.circle_centers_board().map(|c| pose.transform_point(&c));
    let mut c2 = [Pixel::zeros(); 4];
    for (dst, p) in c2.iter_mut().zip(&c3) {
        *dst = project(k, p)?;
    }
    Ok((c3, c2))
}

pub fn mean_reprojection_error(pose: &RigidTransform, corners: &[CornerObservation], spec: &TargetSpec, k: &Intrinsics) -> Result<f64, CameraError> {
    let (board, pixels) = gather(corners, spec)?;
    let mut sum = 0.0;
    for (x, u) in board.iter().zip(&pixels) {
        sum += (project(k, &pose.transform_point(x))? - u).norm();
    }
    Ok(sum / board.len() as f64)
}

pub fn detect_target_camera(corners: &[CornerObservation], spec: &TargetSpec, k: &Intrinsics) -> Result<CameraDetection, CameraError> {
    let pose = solve_pnp(corners, spec, k)?;
    let (centers_3d, centers_2d) = derive_circle_centers(&pose, spec, k)?;
    let reprojection_error = mean_reprojection_error(&pose, corners, spec, k)?;
    Ok(CameraDetection { pose, centers_3d, centers_2d, reprojection_error, corners_used: corners.len() })
}

/// Gradient of the PnP cost at `pose`, exposed for optimality checks.
pub fn pnp_gradient(pose: &RigidTransform, corners: &[CornerObservation], spec: &TargetSpec, k: &Intrinsics) -> Result<nalgebra::Vector6<f64>, CameraError> {
    let (board, pixels) = gather(corners, spec)?;
    let problem = PnpProblem { board: &board, pixels: &pixels, k };
    let g = problem.jacobian(pose).transpose() * problem.residuals(pose);
    Ok(nalgebra::Vector6::from_iterator(g.iter().copied()))
}

/// Stacked pixel residuals `π(T·X) − u` of the PnP problem.
pub fn pnp_residuals(pose: &RigidTransform, corners: &[CornerObservation], spec: &TargetSpec, k: &Intrinsics) -> Result<DVector<f64>, CameraError> {
    let (board, pixels) = gather(corners, spec)?;
    Ok(PnpProblem { board: &board, pixels: &pixels, k }.residuals(pose))
}

/// Analytic Jacobian of [`pnp_residuals`] with respect to a left increment
/// `exp(δ)·T`, δ = (translation, rotation).
pub fn pnp_jacobian(pose: &RigidTransform, corners: &[CornerObservation], spec: &TargetSpec, k: &Intrinsics) -> Result<DMatrix<f64>, CameraError> {
    let (board, pixels) = gather(corners, spec)?;
    Ok(PnpProblem { board: &board, pixels: &pixels, k }.jacobian(pose))
}

/// Cost `½‖r‖²` of the PnP residuals at `pose`.
pub fn pnp_cost(pose: &RigidTransform, corners: &[CornerObservation], spec: &TargetSpec, k: &Intrinsics) -> Result<f64, CameraError> {
    let (board, pixels) = gather(corners, spec)?;
    let problem = PnpProblem { board: &board, pixels: &pixels, k };
    Ok(lm::cost_of(&problem.residuals(pose)))
}
