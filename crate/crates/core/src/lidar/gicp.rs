//! Plane-to-plane generalized ICP.
//!
//! Correspondences run from each target point to its nearest transformed
//! source point within `gicp_corr_dist`. Each pair contributes
//! `dᵀ (C_t + R C_s Rᵀ)⁻¹ d` with `d = t − T·s`; poses are updated by left
//! perturbation `T ← exp(δ)·T` with Gauss–Newton steps.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector6};

use super::{LidarError, LidarParams};
use crate::geometry::{skew, Point3, RigidTransform};
use crate::kdtree::KdTree;

pub const COV_NEIGHBORS: usize = 20;
pub const COV_EPSILON: f64 = 1e-3;
pub const STEP_TOL: f64 = 1e-6;
pub const MIN_POINTS: usize = 50;
const INNER_ITERS: usize = 10;
const INNER_STEP_TOL: f64 = 1e-10;
const ACCEL_COS: f64 = 0.9;
const ACCEL_MAX_SCALE: f64 = 64.0;
const MAX_BACKTRACK: usize = 24;

/// Local surface covariance of every point, with eigenvalues replaced by
/// `(ε, 1, 1)` so that each point acts as a small planar patch.
pub fn point_covariances(points: &[Point3], tree: &KdTree) -> Vec<Matrix3<f64>> {
    points
        .iter()
        .map(|p| {
            let nn = tree.knn(p, COV_NEIGHBORS);
            if nn.len() < 3 {
                return Matrix3::identity();
            }
            let mean = nn.iter().fold(Point3::zeros(), |a, &(i, _)| a + tree.point(i)) / nn.len() as f64;
            let mut cov = Matrix3::zeros();
            for &(i, _) in &nn {
                let d = tree.point(i) - mean;
                cov += d * d.transpose();
            }
            let eig = cov.symmetric_eigen();
            let smallest = eig.eigenvalues.imin();
            let n = eig.eigenvectors.column(smallest).into_owned();
            Matrix3::identity() - (1.0 - COV_EPSILON) * n * n.transpose()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GicpResult {
    /// Source → target.
    pub transform: RigidTransform,
    /// Mean squared correspondence distance, m².
    pub fitness: f64,
    pub iterations: usize,
    pub correspondences: usize,
}

/// `(target index, source index, squared distance)` for every target point
/// with a transformed source point within `max_dist`.
fn correspondences(source_tree: &KdTree, target: &[Point3], t: &RigidTransform, max_dist: f64) -> Vec<(usize, usize, f64)> {
    let inv = t.inverse();
    let max2 = max_dist * max_dist;
    target
        .iter()
        .enumerate()
        .filter_map(|(ti, q)| {
            // Distances are rigid-invariant, so query in the source frame.
            let (si, d2) = source_tree.nearest(&inv.transform_point(q))?;
            (d2 <= max2).then_some((ti, si, d2))
        })
        .collect()
}

fn gn_step(
    source: &[Point3],
    target: &[Point3],
    cov_s: &[Matrix3<f64>],
    cov_t: &[Option<Matrix3<f64>>],
    pairs: &[(usize, usize)],
    t: &RigidTransform,
) -> Option<Vector6<f64>> {
    let mut h = Matrix6::<f64>::zeros();
    let mut g = Vector6::<f64>::zeros();
    for &(ti, si) in pairs {
        let ct = cov_t[ti].expect("computed before the inner loop");
        let q = t.transform_point(&source[si]);
        let d = target[ti] - q;
        let m = (ct + t.rotation * cov_s[si] * t.rotation.transpose()).try_inverse().unwrap_or_else(Matrix3::identity);
        let mut jac = SMatrix::<f64, 3, 6>::zeros();
        jac.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-Matrix3::identity()));
        jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(&q));
        let jm = jac.transpose() * m;
        h += jm * jac;
        g += jm * d;
    }
    match h.cholesky() {
        Some(c) => Some(-c.solve(&g)),
        None => h.pseudo_inverse(1e-12).ok().map(|pinv| -pinv * g),
    }
}

fn mahalanobis_cost(
    source: &[Point3],
    target: &[Point3],
    cov_s: &[Matrix3<f64>],
    cov_t: &[Option<Matrix3<f64>>],
    pairs: &[(usize, usize)],
    t: &RigidTransform,
) -> f64 {
    pairs
        .iter()
        .map(|&(ti, si)| {
            let d = target[ti] - t.transform_point(&source[si]);
            let c = cov_t[ti].expect("computed before the inner loop") + t.rotation * cov_s[si] * t.rotation.transpose();
            c.try_inverse().map_or(d.norm_squared(), |m| d.dot(&(m * d)))
        })
        .sum()
}

/// Mahalanobis cost with associations recomputed at `t`. Every target
/// point contributes at most `cap`; points without a partner contribute
/// exactly `cap`, so losing correspondences never lowers the cost.
struct Objective<'a> {
    source: &'a [Point3],
    target: &'a [Point3],
    source_tree: &'a KdTree,
    target_tree: &'a KdTree,
    cov_s: &'a [Matrix3<f64>],
    cov_t: Vec<Option<Matrix3<f64>>>,
    max_dist: f64,
}

impl Objective<'_> {
    fn cap(&self) -> f64 {
        0.5 * self.max_dist * self.max_dist
    }

    fn ensure_covariances(&mut self, pairs: &[(usize, usize)]) {
        for &(ti, _) in pairs {
            if self.cov_t[ti].is_none() {
                self.cov_t[ti] = Some(point_covariances(&self.target[ti..=ti], self.target_tree)[0]);
            }
        }
    }

    fn eval(&mut self, t: &RigidTransform) -> f64 {
        let pairs: Vec<(usize, usize)> = correspondences(self.source_tree, self.target, t, self.max_dist).iter().map(|c| (c.0, c.1)).collect();
        self.ensure_covariances(&pairs);
        let cap = self.cap();
        let matched: f64 = pairs.iter().map(|&p| mahalanobis_cost(self.source, self.target, self.cov_s, &self.cov_t, &[p], t).min(cap)).sum();
        matched + cap * (self.target.len() - pairs.len()) as f64
    }
}

/// Doubles the step `v` already applied to `t` while the cost drops.
fn extrapolate(obj: &mut Objective, t: &RigidTransform, cost: f64, v: &Vector6<f64>) -> (RigidTransform, f64) {
    let mut best = (*t, cost);
    let mut scale = 1.0;
    while scale < ACCEL_MAX_SCALE {
        let cand = RigidTransform::exp(&(v * scale)).compose(t);
        let c = obj.eval(&cand);
        if c >= best.1 {
            break;
        }
        best = (cand, c);
        scale *= 2.0;
    }
    best
}

/// Registers `source` onto `target` starting from `t_init`.
pub fn gicp_register(source: &[Point3], target: &[Point3], t_init: &RigidTransform, p: &LidarParams) -> Result<GicpResult, LidarError> {
    if source.len() < MIN_POINTS || target.len() < MIN_POINTS {
        return Err(LidarError::DegenerateInput);
    }
    let source_tree = KdTree::build(source);
    let target_tree = KdTree::build(target);
    let cov_s = point_covariances(source, &source_tree);
    // Only target points near the source placement ever pair up, so their
    // covariances are computed on demand.
    let mut obj = Objective { source, target, source_tree: &source_tree, target_tree: &target_tree, cov_s: &cov_s, cov_t: vec![None; target.len()], max_dist: p.gicp_corr_dist };

    let mut t = *t_init;
    let mut cost = obj.eval(&t);
    let mut iterations = 0;
    let mut converged = false;
    let mut last_step = f64::INFINITY;
    // Association set, resulting pose and its cost for every outer iteration.
    let mut history: Vec<(Vec<(usize, usize)>, RigidTransform, f64)> = Vec::new();
    let mut prev_step: Option<Vector6<f64>> = None;
    while iterations < p.gicp_max_iter {
        iterations += 1;
        let pairs = correspondences(&source_tree, target, &t, p.gicp_corr_dist);
        if pairs.len() < 6 {
            return Err(LidarError::PoorFit(f64::INFINITY));
        }
        let ids: Vec<(usize, usize)> = pairs.iter().map(|c| (c.0, c.1)).collect();
        if let Some(k) = history.iter().position(|h| h.0 == ids) {
            // Associations repeat: the iteration has reached a fixed point or
            // a cycle through the same optima. Keep the cheapest of them.
            let best = history[k..].iter().min_by(|a, b| a.2.total_cmp(&b.2)).expect("non-empty");
            t = best.1;
            converged = true;
            break;
        }
        obj.ensure_covariances(&ids);
        let start = t;
        // Solve the fixed-association problem before re-associating.
        let mut full = t;
        for _ in 0..INNER_ITERS {
            let Some(step) = gn_step(source, target, &cov_s, &obj.cov_t, &ids, &full) else { break };
            full = RigidTransform::exp(&step).compose(&full);
            if step.norm() < INNER_STEP_TOL {
                break;
            }
        }
        let v_full = full.compose(&start.inverse()).log().unwrap_or_else(|_| Vector6::zeros());
        // Re-association can make the full step overshoot; halve it until
        // the cost with fresh associations decreases.
        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..MAX_BACKTRACK {
            let cand = RigidTransform::exp(&(v_full * scale)).compose(&start);
            let c = obj.eval(&cand);
            if c < cost {
                accepted = Some((cand, c, v_full * scale));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, c, v)) = accepted else {
            // No descent at any step length down to the tolerance.
            last_step = 0.0;
            converged = true;
            break;
        };
        t = cand;
        cost = c;
        last_step = v.norm();
        if last_step < STEP_TOL {
            converged = true;
            break;
        }
        // Weakly constrained directions (sliding along the board) creep by
        // nearly the same increment every iteration; extrapolate along it.
        if prev_step.is_some_and(|pv: Vector6<f64>| pv.dot(&v) > ACCEL_COS * pv.norm() * last_step) {
            (t, cost) = extrapolate(&mut obj, &t, cost, &v);
        }
        prev_step = Some(v);
        let mcost = mahalanobis_cost(source, target, &cov_s, &obj.cov_t, &ids, &t);
        history.push((ids, t, mcost));
    }
    if !converged {
        return Err(LidarError::NotConverged { iterations, step_norm: last_step });
    }
    let pairs = correspondences(&source_tree, target, &t, p.gicp_corr_dist);
    let fitness = if pairs.is_empty() { f64::INFINITY } else { pairs.iter().map(|c| c.2).sum::<f64>() / pairs.len() as f64 };
    if !(fitness < p.gicp_fitness_eps) {
        return Err(LidarError::PoorFit(fitness));
    }
    Ok(GicpResult { transform: t, fitness, iterations, correspondences: pairs.len() })
}
