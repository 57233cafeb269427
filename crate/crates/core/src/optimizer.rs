//! Joint estimation of every sensor pose from shared observations of the
//! four hole centers.
//!
//! Poses are `T_S^B`: sensor frame into the frame of the reference sensor
//! `B`, which is pinned to the identity. Three residual families tie the
//! sensors together per sequence:
//!
//! * camera → camera: centers from camera `i` projected into camera `j`,
//!   compared with `j`'s own projected centers (pixels, weighted);
//! * LiDAR → camera: the same with LiDAR centers;
//! * LiDAR ↔ LiDAR: difference of the centers mapped into `B` (meters).

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::projection_jacobian;
use crate::geometry::{self, project, Intrinsics, Pixel, Point3, RigidTransform};
use crate::lm::{self, LeastSquares, LmConfig, Termination};
use crate::sensor::{display_names, SensorInfo, SensorKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("no sequence has detections from two sensors")]
    NoSequences,
    #[error("reference sensor {0} has no usable detections")]
    NoReferenceObservations(String),
    #[error("co-detection graph is disconnected: {0:?}")]
    DisconnectedGraph(Vec<Vec<String>>),
    #[error("circle centers of {sensor} in sequence {sequence} are collinear")]
    DegenerateCenters { sequence: u32, sensor: String },
    #[error("solver stopped after {iterations} iterations (gradient {gradient_norm:.3e})")]
    NotConverged { iterations: usize, gradient_norm: f64, result: Box<CalibrationResult> },
    #[error("normal equations are singular; suspect sensors {0:?}")]
    SingularNormalEquations(Vec<String>),
    #[error("unknown sensor {0}")]
    UnknownSensor(String),
    #[error("camera {0} has no intrinsics")]
    MissingIntrinsics(String),
}

/// One sensor's view of the four hole centers, in its own frame and in
/// canonical order.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Camera { centers_3d: [Point3; 4], centers_2d: [Pixel; 4] },
    Lidar { centers: [Point3; 4] },
}

impl Observation {
    pub fn centers_3d(&self) -> &[Point3; 4] {
        match self {
            Observation::Camera { centers_3d, .. } => centers_3d,
            Observation::Lidar { centers } => centers,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceObservations {
    pub sequence: u32,
    /// Keyed by sensor index.
    pub observations: BTreeMap<usize, Observation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveParams {
    pub max_iter: usize,
    pub lm_lambda_init: f64,
    pub gradient_tol: f64,
    /// Weight of pixel residuals; `None` uses `1/fx` of the projecting camera.
    pub camera_residual_weight: Option<f64>,
    /// Weight of metric LiDAR–LiDAR residuals.
    pub lidar_residual_weight: f64,
    /// Huber threshold on the weighted norm of each residual block.
    pub huber_delta: Option<f64>,
    pub camera_self_pairs: bool,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            max_iter: 200,
            lm_lambda_init: 1e-3,
            gradient_tol: 1e-10,
            camera_residual_weight: None,
            lidar_residual_weight: 1.0,
            huber_delta: None,
            camera_self_pairs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProblem {
    pub sensors: Vec<SensorInfo>,
    pub reference: usize,
    pub sequences: Vec<SequenceObservations>,
    pub warnings: Vec<String>,
}

impl CalibrationProblem {
    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.id == id)
    }

    /// Number of sequences in which both sensors detect the board.
    pub fn co_detections(&self) -> BTreeMap<(usize, usize), usize> {
        let mut m = BTreeMap::new();
        for seq in &self.sequences {
            let ids: Vec<usize> = seq.observations.keys().copied().collect();
            for (a, &i) in ids.iter().enumerate() {
                for &j in &ids[a + 1..] {
                    *m.entry((i, j)).or_insert(0) += 1;
                }
            }
        }
        m
    }
}

fn components(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    groups.into_values().collect()
}

pub fn build_problem(sensors: Vec<SensorInfo>, detections: Vec<SequenceObservations>, reference: &str) -> Result<CalibrationProblem, OptimizerError> {
    let reference_idx = sensors.iter().position(|s| s.id == reference).ok_or_else(|| OptimizerError::UnknownSensor(reference.to_string()))?;
    for s in &sensors {
        if s.kind == SensorKind::Camera && s.intrinsics.is_none() {
            return Err(OptimizerError::MissingIntrinsics(s.id.clone()));
        }
    }
    let mut warnings = Vec::new();
    let mut sequences = Vec::new();
    for seq in detections {
        if let Some(&bad) = seq.observations.keys().find(|&&i| i >= sensors.len()) {
            return Err(OptimizerError::UnknownSensor(format!("index {bad}")));
        }
        if seq.observations.len() < 2 {
            warnings.push(format!("sequence {} dropped: fewer than two sensors detected the board", seq.sequence));
            continue;
        }
        sequences.push(seq);
    }
    if sequences.is_empty() {
        return Err(OptimizerError::NoSequences);
    }
    let problem = CalibrationProblem { sensors, reference: reference_idx, sequences, warnings };
    if !problem.sequences.iter().any(|s| s.observations.contains_key(&reference_idx)) {
        return Err(OptimizerError::NoReferenceObservations(reference.to_string()));
    }
    let comps = components(problem.sensors.len(), problem.co_detections().into_keys());
    if comps.len() > 1 {
        let named = comps.iter().map(|c| c.iter().map(|&i| problem.sensors[i].id.clone()).collect()).collect();
        return Err(OptimizerError::DisconnectedGraph(named));
    }
    Ok(problem)
}

/// Least-squares rigid transform mapping `src` onto `dst`.
pub fn kabsch(src: &[Point3], dst: &[Point3]) -> Option<RigidTransform> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let cd = dst.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut sv = svd.singular_values;
    // Sort-independent rank check: need two non-zero singular values.
    let mut s_sorted = [sv[0], sv[1], sv[2]];
    s_sorted.sort_by(|a, b| b.total_cmp(a));
    if s_sorted[1] <= 1e-12 * s_sorted[0].max(1e-300) {
        return None;
    }
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        let smallest = sv.imin();
        d[(smallest, smallest)] = -1.0;
        sv[smallest] = -sv[smallest];
    }
    let r = vt.transpose() * d * u.transpose();
    Some(RigidTransform::new(r, cd - r * cs))
}

fn centers_collinear(c: &[Point3; 4]) -> bool {
    let a = c[1] - c[0];
    let scale = c.iter().map(|p| (p - c[0]).norm()).fold(0.0, f64::max).max(1e-300);
    c[2..].iter().all(|p| a.cross(&(p - c[0])).norm() <= 1e-9 * scale * scale) && c.iter().all(|p| a.cross(&(p - c[0])).norm() <= 1e-9 * scale * scale)
}

pub fn cyclic_shift(c: &[Point3; 4], shift: usize) -> [Point3; 4] {
    std::array::from_fn(|k| c[(k + shift) % 4])
}

/// Relative transform `T_a^b` from every sequence both sensors detect. When
/// a LiDAR is involved its center order is only known up to a cyclic shift,
/// so each sequence's shift is chosen against a consensus hypothesis.
fn pair_transform(p: &CalibrationProblem, a: usize, b: usize) -> Option<RigidTransform> {
    let shared: Vec<(&[Point3; 4], &[Point3; 4])> = p
        .sequences
        .iter()
        .filter_map(|s| Some((s.observations.get(&a)?.centers_3d(), s.observations.get(&b)?.centers_3d())))
        .collect();
    if shared.is_empty() {
        return None;
    }
    let ambiguous = p.sensors[a].kind == SensorKind::Lidar || p.sensors[b].kind == SensorKind::Lidar;
    let shifts: &[usize] = if ambiguous { &[0, 1, 2, 3] } else { &[0] };
    let fit = |choice: &[usize]| -> Option<RigidTransform> {
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for ((ca, cb), &k) in shared.iter().zip(choice) {
            src.extend_from_slice(&ca[..]);
            dst.extend_from_slice(&cyclic_shift(cb, k));
        }
        kabsch(&src, &dst)
    };
    let best_shifts = |t: &RigidTransform| -> (Vec<usize>, f64) {
        let mut total = 0.0;
        let choice = shared
            .iter()
            .map(|(ca, cb)| {
                let (k, e) = shifts
                    .iter()
                    .map(|&k| {
                        let sb = cyclic_shift(cb, k);
                        (k, ca.iter().zip(&sb).map(|(x, y)| (t.transform_point(x) - y).norm_squared()).sum::<f64>())
                    })
                    .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 - 1e-12 { c } else { acc });
                total += e;
                k
            })
            .collect();
        (choice, total)
    };
    let mut best: Option<(RigidTransform, f64)> = None;
    for (ca, cb) in &shared {
        for &k in shifts {
            let Some(h) = kabsch(&ca[..], &cyclic_shift(cb, k)) else { continue };
            let (choice, _) = best_shifts(&h);
            let Some(t) = fit(&choice) else { continue };
            let (_, err) = best_shifts(&t);
            if best.as_ref().is_none_or(|b| err < b.1 - 1e-12) {
                best = Some((t, err));
            }
        }
    }
    best.map(|b| b.0)
}

/// Starting poses `T_S^B` from closed-form pairwise alignments chained along
/// the spanning tree with the most co-detections per edge.
pub fn initial_guess(p: &CalibrationProblem) -> Result<Vec<RigidTransform>, OptimizerError> {
    for seq in &p.sequences {
        for (&i, obs) in &seq.observations {
            if centers_collinear(obs.centers_3d()) {
                return Err(OptimizerError::DegenerateCenters { sequence: seq.sequence, sensor: p.sensors[i].id.clone() });
            }
        }
    }
    let n = p.sensors.len();
    let weights = p.co_detections();
    let mut poses: Vec<Option<RigidTransform>> = vec![None; n];
    poses[p.reference] = Some(RigidTransform::identity());
    // Prim's algorithm; ties go to the lowest (parent, child) indices.
    loop {
        let mut pick: Option<(usize, usize, usize)> = None;
        for (&(i, j), &w) in &weights {
            for (from, to) in [(i, j), (j, i)] {
                if poses[from].is_some() && poses[to].is_none() && pick.is_none_or(|(_, _, bw)| w > bw) {
                    pick = Some((from, to, w));
                }
            }
        }
        let Some((from, to, _)) = pick else { break };
        // T_to^B = T_from^B · T_to^from
        let rel = pair_transform(p, to, from).ok_or_else(|| OptimizerError::DegenerateCenters { sequence: 0, sensor: p.sensors[to].id.clone() })?;
        poses[to] = Some(poses[from].expect("in tree").compose(&rel));
    }
    poses
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.ok_or_else(|| OptimizerError::DisconnectedGraph(vec![vec![p.sensors[i].id.clone()]])))
        .collect()
}

/// Which residual family a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    CameraCamera,
    LidarCamera,
    LidarLidar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub sequence: usize,
    pub kind: BlockKind,
    /// Sensor whose centers are mapped.
    pub from: usize,
    /// Projecting camera, or the second LiDAR.
    pub to: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        match self.kind {
            BlockKind::LidarLidar => 12,
            _ => 8,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Every residual block, in a fixed order: sequences, then camera pairs,
/// LiDAR–camera pairs and LiDAR pairs, each by ascending sensor index.
pub fn residual_blocks(p: &CalibrationProblem, sp: &SolveParams) -> Vec<Block> {
    let mut out = Vec::new();
    for (si, seq) in p.sequences.iter().enumerate() {
        let of = |k| seq.observations.keys().copied().filter(move |&i| p.sensors[i].kind == k);
        for j in of(SensorKind::Camera) {
            for i in of(SensorKind::Camera) {
                if i != j || sp.camera_self_pairs {
                    out.push(Block { sequence: si, kind: BlockKind::CameraCamera, from: i, to: j });
                }
            }
        }
        for i in of(SensorKind::Lidar) {
            for j in of(SensorKind::Camera) {
                out.push(Block { sequence: si, kind: BlockKind::LidarCamera, from: i, to: j });
            }
        }
        let lidars: Vec<usize> = of(SensorKind::Lidar).collect();
        for (a, &i) in lidars.iter().enumerate() {
            for &j in &lidars[a + 1..] {
                out.push(Block { sequence: si, kind: BlockKind::LidarLidar, from: i, to: j });
            }
        }
    }
    out
}

/// Weights actually used: per-camera pixel weight and the LiDAR weight.
pub fn effective_weights(p: &CalibrationProblem, sp: &SolveParams) -> (Vec<f64>, f64) {
    let cams = p
        .sensors
        .iter()
        .map(|s| match (s.kind, &s.intrinsics) {
            (SensorKind::Camera, Some(k)) => sp.camera_residual_weight.unwrap_or(1.0 / k.fx),
            _ => 0.0,
        })
        .collect();
    (cams, sp.lidar_residual_weight)
}

struct Problem<'a> {
    p: &'a CalibrationProblem,
    blocks: Vec<Block>,
    cam_w: Vec<f64>,
    lidar_w: f64,
    huber: Option<f64>,
    /// Column offset of each sensor; `None` for the reference.
    cols: Vec<Option<usize>>,
}

impl<'a> Problem<'a> {
    fn new(p: &'a CalibrationProblem, sp: &SolveParams) -> Self {
        let (cam_w, lidar_w) = effective_weights(p, sp);
        let mut next = 0;
        let cols = (0..p.sensors.len())
            .map(|i| {
                (i != p.reference).then(|| {
                    next += 6;
                    next - 6
                })
            })
            .collect();
        Problem { p, blocks: residual_blocks(p, sp), cam_w, lidar_w, huber: sp.huber_delta, cols }
    }

    fn dim(&self) -> usize {
        6 * (self.p.sensors.len() - 1)
    }

    fn rows(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    fn intrinsics(&self, i: usize) -> &Intrinsics {
        self.p.sensors[i].intrinsics.as_ref().expect("checked in build_problem")
    }

    /// Raw weighted residual of one block, plus whether a center fell behind
    /// the projecting camera.
    fn block_residual(&self, b: &Block, poses: &[RigidTransform]) -> (Vec<f64>, bool) {
        let seq = &self.p.sequences[b.sequence];
        let src = seq.observations[&b.from].centers_3d();
        match b.kind {
            BlockKind::LidarLidar => {
                let dst = seq.observations[&b.to].centers_3d();
                let mut r = Vec::with_capacity(12);
                for k in 0..4 {
                    let d = poses[b.from].transform_point(&src[k]) - poses[b.to].transform_point(&dst[k]);
                    r.extend((d * self.lidar_w).iter());
                }
                (r, false)
            }
            _ => {
                let Observation::Camera { centers_2d, .. } = &seq.observations[&b.to] else { unreachable!("projecting sensor is a camera") };
                let k = self.intrinsics(b.to);
                let w = self.cam_w[b.to];
                let rel = poses[b.to].inverse().compose(&poses[b.from]);
                let mut r = Vec::with_capacity(8);
                let mut behind = false;
                for m in 0..4 {
                    match project(k, &rel.transform_point(&src[m])) {
                        Ok(u) => r.extend(((u - centers_2d[m]) * w).iter()),
                        Err(_) => {
                            behind = true;
                            r.extend([w * k.diagonal(), w * k.diagonal()]);
                        }
                    }
                }
                (r, behind)
            }
        }
    }

    fn block_jacobian(&self, b: &Block, poses: &[RigidTransform]) -> (DMatrix<f64>, DMatrix<f64>) {
        let seq = &self.p.sequences[b.sequence];
        let src = seq.observations[&b.from].centers_3d();
        match b.kind {
            BlockKind::LidarLidar => {
                let dst = seq.observations[&b.to].centers_3d();
                let mut ji = DMatrix::zeros(12, 6);
                let mut jj = DMatrix::zeros(12, 6);
                for k in 0..4 {
                    let pi = poses[b.from].transform_point(&src[k]);
                    let pj = poses[b.to].transform_point(&dst[k]);
                    ji.view_mut((3 * k, 0), (3, 6)).copy_from(&(perturb(&pi) * self.lidar_w));
                    jj.view_mut((3 * k, 0), (3, 6)).copy_from(&(-perturb(&pj) * self.lidar_w));
                }
                (ji, jj)
            }
            _ => {
                let k = self.intrinsics(b.to);
                let w = self.cam_w[b.to];
                let rj_t = poses[b.to].rotation.transpose();
                let tj_inv = poses[b.to].inverse();
                let mut ji = DMatrix::zeros(8, 6);
                let mut jj = DMatrix::zeros(8, 6);
                for m in 0..4 {
                    let pb = poses[b.from].transform_point(&src[m]);
                    let q = tj_inv.transform_point(&pb);
                    if q.z <= geometry::MIN_DEPTH {
                        continue;
                    }
                    let jp = projection_jacobian(k, &q) * rj_t * w;
                    let dp = perturb(&pb);
                    ji.view_mut((2 * m, 0), (2, 6)).copy_from(&(jp * dp));
                    jj.view_mut((2 * m, 0), (2, 6)).copy_from(&(-(jp * dp)));
                }
                (ji, jj)
            }
        }
    }

    fn huber_scale(&self, r: &[f64]) -> f64 {
        match self.huber {
            Some(delta) => {
                let e = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                if e <= delta {
                    1.0
                } else {
                    (2.0 * delta / e - delta * delta / (e * e)).sqrt()
                }
            }
            None => 1.0,
        }
    }
}

/// d(exp(δ)·p)/dδ, δ = (translation, rotation).
fn perturb(p: &Point3) -> SMatrix<f64, 3, 6> {
    let mut m = SMatrix::<f64, 3, 6>::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-geometry::skew(p)));
    m
}

impl LeastSquares for Problem<'_> {
    type State = Vec<RigidTransform>;

    fn residuals(&self, poses: &Vec<RigidTransform>) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.rows());
        for b in &self.blocks {
            let (r, _) = self.block_residual(b, poses);
            let s = self.huber_scale(&r);
            out.extend(r.iter().map(|x| x * s));
        }
        DVector::from_vec(out)
    }

    fn jacobian(&self, poses: &Vec<RigidTransform>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.rows(), self.dim());
        let mut row = 0;
        for b in &self.blocks {
            let (ji, jj) = self.block_jacobian(b, poses);
            let s = if self.huber.is_some() { self.huber_scale(&self.block_residual(b, poses).0) } else { 1.0 };
            for (sensor, jb) in [(b.from, &ji), (b.to, &jj)] {
                if let Some(c) = self.cols[sensor] {
                    let mut view = j.view_mut((row, c), (b.len(), 6));
                    view += jb * s;
                }
            }
            row += b.len();
        }
        j
    }

    fn retract(&self, poses: &Vec<RigidTransform>, delta: &DVector<f64>) -> Vec<RigidTransform> {
        poses
            .iter()
            .enumerate()
            .map(|(i, t)| match self.cols[i] {
                Some(c) => RigidTransform::exp(&Vector6::from_iterator(delta.rows(c, 6).iter().copied())).compose(t),
                None => *t,
            })
            .collect()
    }
}

/// Stacked weighted residuals at `poses`.
pub fn residuals(p: &CalibrationProblem, poses: &[RigidTransform], sp: &SolveParams) -> DVector<f64> {
    Problem::new(p, sp).residuals(&poses.to_vec())
}

/// Analytic Jacobian of [`residuals`] with respect to left increments of
/// every non-reference pose.
pub fn jacobian(p: &CalibrationProblem, poses: &[RigidTransform], sp: &SolveParams) -> DMatrix<f64> {
    Problem::new(p, sp).jacobian(&poses.to_vec())
}

/// Applies tangent increments to every non-reference pose.
pub fn retract(p: &CalibrationProblem, poses: &[RigidTransform], delta: &DVector<f64>) -> Vec<RigidTransform> {
    Problem::new(p, &SolveParams::default()).retract(&poses.to_vec(), delta)
}

/// Number of projected centers that fell behind their camera.
pub fn behind_camera_count(p: &CalibrationProblem, poses: &[RigidTransform], sp: &SolveParams) -> usize {
    let prob = Problem::new(p, sp);
    prob.blocks.iter().filter(|b| prob.block_residual(b, poses).1).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub sensors: Vec<SensorInfo>,
    pub reference: usize,
    /// `T_S^B` per sensor.
    pub poses: Vec<RigidTransform>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub termination: Termination,
    pub cost_history: Vec<f64>,
    pub camera_weights: Vec<f64>,
    pub lidar_weight: f64,
    pub behind_camera: usize,
}

impl CalibrationResult {
    pub fn pose_of(&self, id: &str) -> Option<&RigidTransform> {
        self.sensors.iter().position(|s| s.id == id).map(|i| &self.poses[i])
    }

    /// `T_a^b`.
    pub fn relative(&self, a: usize, b: usize) -> RigidTransform {
        self.poses[b].inverse().compose(&self.poses[a])
    }
}

fn singular_suspects(p: &CalibrationProblem, prob: &Problem, j: &DMatrix<f64>) -> Vec<String> {
    let h = j.transpose() * j;
    let eig = h.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let mut suspects = BTreeSet::new();
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= 1e-14 * max.max(1e-300) {
            let v = eig.eigenvectors.column(k);
            for (i, c) in prob.cols.iter().enumerate() {
                if let Some(c) = c {
                    if v.rows(*c, 6).norm() > 0.1 {
                        suspects.insert(p.sensors[i].id.clone());
                    }
                }
            }
        }
    }
    suspects.into_iter().collect()
}

/// Levenberg–Marquardt over all non-reference poses.
pub fn solve(p: &CalibrationProblem, initial: &[RigidTransform], sp: &SolveParams) -> Result<CalibrationResult, OptimizerError> {
    let prob = Problem::new(p, sp);
    let j0 = prob.jacobian(&initial.to_vec());
    let suspects = singular_suspects(p, &prob, &j0);
    if !suspects.is_empty() {
        return Err(OptimizerError::SingularNormalEquations(suspects));
    }
    let cfg = LmConfig { max_iter: sp.max_iter, lambda_init: sp.lm_lambda_init, gradient_tol: sp.gradient_tol, step_tol: 1e-14 };
    let rep = lm::minimize(&prob, initial.to_vec(), &cfg);
    let result = CalibrationResult {
        sensors: p.sensors.clone(),
        reference: p.reference,
        behind_camera: behind_camera_count(p, &rep.state, sp),
        poses: rep.state,
        initial_cost: rep.initial_cost,
        final_cost: rep.final_cost,
        iterations: rep.iterations,
        gradient_norm: rep.gradient_norm,
        termination: rep.termination,
        cost_history: rep.cost_history,
        camera_weights: prob.cam_w.clone(),
        lidar_weight: prob.lidar_w,
    };
    if !rep_converged(&result) {
        return Err(OptimizerError::NotConverged { iterations: result.iterations, gradient_norm: result.gradient_norm, result: Box::new(result) });
    }
    Ok(result)
}

fn rep_converged(r: &CalibrationResult) -> bool {
    r.termination != Termination::MaxIterations
}

/// Sum of squared residuals of the blocks that involve `sensor` in sequence
/// `seq`. Cameras fix the order unambiguously, so LiDAR pairs only count
/// when no camera saw the board.
fn detection_cost(prob: &Problem, seq: usize, sensor: usize, poses: &[RigidTransform]) -> f64 {
    let has_camera = prob.blocks.iter().any(|b| b.sequence == seq && b.kind != BlockKind::LidarLidar);
    prob.blocks
        .iter()
        .filter(|b| b.sequence == seq && (b.from == sensor || b.to == sensor))
        .filter(|b| !has_camera || b.kind != BlockKind::LidarLidar)
        .map(|b| prob.block_residual(b, poses).0.iter().map(|x| x * x).sum::<f64>())
        .sum()
}

/// Picks, for every LiDAR detection, the cyclic order of its centers that
/// best agrees with the other sensors under `poses`.
pub fn resolve_circle_ordering(p: &CalibrationProblem, poses: &[RigidTransform]) -> CalibrationProblem {
    let mut out = p.clone();
    let sp = SolveParams::default();
    for _pass in 0..4 {
        let mut changed = false;
        for si in 0..out.sequences.len() {
            let lidars: Vec<usize> = out.sequences[si].observations.iter().filter(|(_, o)| matches!(o, Observation::Lidar { .. })).map(|(&i, _)| i).collect();
            for i in lidars {
                let Observation::Lidar { centers } = out.sequences[si].observations[&i].clone() else { unreachable!() };
                let mut best = (0usize, f64::INFINITY);
                for shift in 0..4 {
                    let mut trial = out.clone();
                    trial.sequences[si].observations.insert(i, Observation::Lidar { centers: cyclic_shift(&centers, shift) });
                    let prob = Problem::new(&trial, &sp);
                    let c = detection_cost(&prob, si, i, poses);
                    if c < best.1 - 1e-12 * (1.0 + best.1.abs().min(1e300)) {
                        best = (shift, c);
                    }
                }
                if best.0 != 0 {
                    out.sequences[si].observations.insert(i, Observation::Lidar { centers: cyclic_shift(&centers, best.0) });
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    out
}

/// Deviation from identity of a composed loop of pairwise transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDeviation {
    pub chain: Vec<String>,
    pub rotation_deg: f64,
    pub translation_m: f64,
}

fn chain_indices(sensors: &[SensorInfo], chain: &[String]) -> Result<Vec<usize>, OptimizerError> {
    if chain.len() < 2 || chain.first() != chain.last() {
        return Err(OptimizerError::UnknownSensor("chain must start and end at the same sensor".into()));
    }
    chain.iter().map(|id| sensors.iter().position(|s| &s.id == id).ok_or_else(|| OptimizerError::UnknownSensor(id.clone()))).collect()
}

fn deviation(chain: &[String], edges: impl Iterator<Item = RigidTransform>) -> ChainDeviation {
    let mut acc = RigidTransform::identity();
    for e in edges {
        acc = e.compose(&acc);
    }
    ChainDeviation { chain: chain.to_vec(), rotation_deg: acc.rotation_angle().to_degrees(), translation_m: acc.translation.norm() }
}

/// Composes `T_X^Y = (T_Y^B)⁻¹·T_X^B` around `chain` using the solved poses.
pub fn consistency_check(r: &CalibrationResult, chain: &[String]) -> Result<ChainDeviation, OptimizerError> {
    let idx = chain_indices(&r.sensors, chain)?;
    Ok(deviation(chain, idx.windows(2).map(|w| r.relative(w[0], w[1]))))
}

/// The same loop over transforms estimated independently per sensor pair.
/// Pairs never seen together are bridged through the co-detection graph
/// along the path with the fewest hops.
pub fn consistency_check_pairwise(p: &CalibrationProblem, chain: &[String]) -> Result<ChainDeviation, OptimizerError> {
    let idx = chain_indices(&p.sensors, chain)?;
    let co = p.co_detections();
    let mut edges = Vec::new();
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let path = shortest_path(p.sensors.len(), &co, a, b).ok_or_else(|| OptimizerError::DisconnectedGraph(vec![vec![p.sensors[a].id.clone()], vec![p.sensors[b].id.clone()]]))?;
        let mut t = RigidTransform::identity();
        for hop in path.windows(2) {
            let e = pair_transform(p, hop[0], hop[1]).ok_or_else(|| OptimizerError::DegenerateCenters { sequence: 0, sensor: p.sensors[hop[0]].id.clone() })?;
            t = e.compose(&t);
        }
        edges.push(t);
    }
    Ok(deviation(chain, edges.into_iter()))
}

fn shortest_path(n: usize, co: &BTreeMap<(usize, usize), usize>, a: usize, b: usize) -> Option<Vec<usize>> {
    if a == b {
        return Some(vec![a]);
    }
    let mut prev = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::from([a]);
    seen[a] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            let linked = co.contains_key(&(u.min(v), u.max(v)));
            if linked && !seen[v] {
                seen[v] = true;
                prev[v] = u;
                if v == b {
                    let mut path = vec![b];
                    while *path.last().unwrap() != a {
                        path.push(prev[*path.last().unwrap()]);
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(v);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairErrors {
    pub pair: String,
    pub kinds: (SensorKind, SensorKind),
    /// Center-to-center distances in `B`, m.
    pub errors: [f64; 4],
}

impl PairErrors {
    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / 4.0
    }

    /// Row text: `S4-S5, [0.0342, 0.0085, 0.0253, 0.0091]`.
    pub fn row(&self) -> String {
        let e: Vec<String> = self.errors.iter().map(|x| format!("{x:.4}")).collect();
        format!("{}, [{}]", self.pair, e.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub sequence: u32,
    pub pairs: Vec<PairErrors>,
}

/// Per sequence and co-detecting pair, the distance between each sensor's
/// hole centers after mapping both into `B`.
pub fn reprojection_report(r: &CalibrationResult, p: &CalibrationProblem) -> Vec<SequenceReport> {
    let names = display_names(&p.sensors);
    let number = |i: usize| names[i][1..].parse::<usize>().unwrap_or(usize::MAX);
    p.sequences
        .iter()
        .map(|seq| {
            let mut ids: Vec<usize> = seq.observations.keys().copied().collect();
            ids.sort_by_key(|&i| number(i));
            let mut pairs = Vec::new();
            for (a, &i) in ids.iter().enumerate() {
                for &j in &ids[a + 1..] {
                    let ci = seq.observations[&i].centers_3d();
                    let cj = seq.observations[&j].centers_3d();
                    let errors = std::array::from_fn(|k| (r.poses[i].transform_point(&ci[k]) - r.poses[j].transform_point(&cj[k])).norm());
                    pairs.push(PairErrors { pair: format!("{}-{}", names[i], names[j]), kinds: (p.sensors[i].kind, p.sensors[j].kind), errors });
                }
            }
            SequenceReport { sequence: seq.sequence, pairs }
        })
        .collect()
}

/// Convenience wrapper: initial guess, ordering resolution and solve.
pub fn calibrate(p: &CalibrationProblem, sp: &SolveParams) -> Result<(CalibrationProblem, CalibrationResult), OptimizerError> {
    let init = initial_guess(p)?;
    let resolved = resolve_circle_ordering(p, &init);
    let init = initial_guess(&resolved)?;
    let result = solve(&resolved, &init, sp)?;
    Ok((resolved, result))
}

/// Residual vector length implied by the per-sequence sensor counts.
pub fn expected_residual_len(p: &CalibrationProblem, sp: &SolveParams) -> usize {
    p.sequences
        .iter()
        .map(|s| {
            let c = s.observations.keys().filter(|&&i| p.sensors[i].kind == SensorKind::Camera).count();
            let l = s.observations.len() - c;
            let cc = if sp.camera_self_pairs { c * c } else { c * c.saturating_sub(1) };
            8 * cc + 8 * l * c + 12 * l * l.saturating_sub(1) / 2
        })
        .sum()
}

pub fn vec3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::from(v)
}
