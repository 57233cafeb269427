//! Dense Levenberg–Marquardt used by both PnP refinement and the global
//! pose solve.
//!
//! Damping follows the classic schedule: λ starts at `lambda_init`, is
//! divided by 10 after an accepted step and multiplied by 10 after a
//! rejected one. The damped system is `(JᵀJ + λ·diag(JᵀJ)) δ = −Jᵀr`.

use nalgebra::{DMatrix, DVector};

/// A nonlinear least-squares problem over a manifold-valued state.
pub trait LeastSquares {
    type State: Clone;

    fn residuals(&self, state: &Self::State) -> DVector<f64>;

    fn jacobian(&self, state: &Self::State) -> DMatrix<f64>;

    /// Applies a tangent-space increment.
    fn retract(&self, state: &Self::State, delta: &DVector<f64>) -> Self::State;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iter: usize,
    pub lambda_init: f64,
    pub gradient_tol: f64,
    /// Relative step size below which the solve is considered stalled.
    pub step_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iter: 100, lambda_init: 1e-3, gradient_tol: 1e-10, step_tol: 1e-14 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    /// No damping level produced a decrease; the state is numerically optimal.
    NoFurtherDecrease,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmReport<S> {
    pub state: S,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub termination: Termination,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Columns of the normal matrix that stayed exactly zero.
    pub zero_columns: Vec<usize>,
}

impl<S> LmReport<S> {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}


pub fn cost_of(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

pub fn minimize<P: LeastSquares>(problem: &P, initial: P::State, cfg: &LmConfig) -> LmReport<P::State> {
    let mut state = initial;
    let mut r = problem.residuals(&state);
    let mut cost = cost_of(&r);
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = cfg.lambda_init;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut gradient_norm = f64::INFINITY;
    let mut zero_columns = Vec::new();

    while iterations < cfg.max_iter {
        let j = problem.jacobian(&state);
        let jt = j.transpose();
        let h = &jt * &j;
        let g = &jt * &r;
        gradient_norm = g.amax();
        zero_columns = (0..h.ncols()).filter(|&c| h[(c, c)] == 0.0).collect();
        if gradient_norm < cfg.gradient_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        iterations += 1;

        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = h.clone();
            for c in 0..damped.ncols() {
                // Floor keeps unobserved directions finite instead of singular.
                damped[(c, c)] += lambda * h[(c, c)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = -chol.solve(&g);
            let candidate = problem.retract(&state, &delta);
            let r_new = problem.residuals(&candidate);
            // Summing per-residual differences keeps the sign of tiny
            // decreases that subtracting two rounded totals would lose.
            let change = 0.5 * (&r_new - &r).dot(&(&r_new + &r));
            let cost_new = cost + change;
            if change.is_finite() && change < 0.0 {
                let step_small = delta.norm() < cfg.step_tol * (1.0 + delta.len() as f64);
                state = candidate;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if step_small {
                    termination = Termination::StepTolerance;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            termination = Termination::NoFurtherDecrease;
            break;
        }
        if termination == Termination::StepTolerance {
            break;
        }
    }
    if termination == Termination::MaxIterations && gradient_norm.is_finite() {
        // A final check: the last accepted step may have reached the tolerance.
        let g = problem.jacobian(&state).transpose() * &r;
        gradient_norm = g.amax();
        if gradient_norm < cfg.gradient_tol {
            termination = Termination::GradientTolerance;
        }
    }
    LmReport {
        state,
        initial_cost,
        final_cost: cost,
        iterations,
        gradient_norm,
        termination,
        cost_history: history,
        zero_columns,
    }
}

/// Central-difference Jacobian around `state`, used as a test oracle.
pub fn numeric_jacobian<P: LeastSquares>(problem: &P, state: &P::State, dim: usize, step: f64) -> DMatrix<f64> {
    let r0 = problem.residuals(state);
    let mut j = DMatrix::zeros(r0.len(), dim);
    for c in 0..dim {
        let mut d = DVector::zeros(dim);
        d[c] = step;
        let rp = problem.residuals(&problem.retract(state, &d));
        d[c] = -step;
        let rm = problem.residuals(&problem.retract(state, &d));
        j.set_column(c, &((rp - rm) / (2.0 * step)));
    }
    j
}
