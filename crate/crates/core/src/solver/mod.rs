//! Local NLP solver for [`OcpProblem`]s: an augmented-Lagrangian outer loop
//! over a bounded Levenberg-Marquardt inner solver, plus a feasibility phase
//! that minimizes the squared constraint violation.

mod banded;
mod lm;

pub use banded::{bandwidth, rcm_order, BandMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::ocp::OcpProblem;
use lm::{minimize, LmOptions, LmStop, LsqModel, Workspace};

/// Solver tolerances and budgets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Largest accepted constraint violation.
    pub tol_feas: f64,
    /// Tolerance on the projected gradient of the Lagrangian.
    pub tol_opt: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    /// Step used by [`check_derivatives`].
    pub fd_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_feas: 1e-6,
            tol_opt: 1e-6,
            max_outer_iters: 50,
            max_inner_iters: 200,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            fd_step: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tol_feas", self.tol_feas),
            ("tol_opt", self.tol_opt),
            ("penalty_init", self.penalty_init),
            ("fd_step", self.fd_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::InvalidParameter("penalty_growth must exceed 1".into()));
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::InvalidParameter("iteration budgets must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Feasible and stationary within tolerance.
    Optimal,
    /// Feasible, but stationarity was not certified.
    FeasiblePoint,
    /// Violation could not be driven below `tol_feas`.
    Infeasible,
    /// Budget exhausted without a feasible point.
    IterationLimit,
    NumericalFailure,
}

impl Status {
    pub fn is_feasible(self) -> bool {
        matches!(self, Status::Optimal | Status::FeasiblePoint)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::FeasiblePoint => "feasible_point",
            Status::Infeasible => "infeasible",
            Status::IterationLimit => "iteration_limit",
            Status::NumericalFailure => "numerical_failure",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub status: Status,
    pub primal: Vec<f64>,
    pub max_violation: f64,
    pub objective: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    /// Best violation so far, one entry per outer iteration (feasibility
    /// phase) or the violation after each outer iteration (full solve).
    pub violation_history: Vec<f64>,
}

/// Violation used for verdicts: the larger of the raw residual of `z` and
/// the shortfall along the rollout of its controls.
pub fn violation(problem: &OcpProblem, z: &[f64]) -> f64 {
    problem.max_violation(z).max(problem.rollout_violation(z))
}

fn start_point(problem: &OcpProblem, warm: &[f64]) -> Result<Vec<f64>> {
    check_dim("warm start", problem.n_vars, warm.len())?;
    Ok(warm
        .iter()
        .zip(problem.lower.iter().zip(&problem.upper))
        .map(|(v, (l, u))| v.clamp(*l, *u))
        .collect())
}

fn failure(problem: &OcpProblem, z: Vec<f64>) -> SolveResult {
    SolveResult {
        status: Status::NumericalFailure,
        max_violation: f64::INFINITY,
        objective: f64::NAN,
        primal: z,
        outer_iters: 0,
        inner_iters: 0,
        violation_history: Vec::new(),
    }
    .tap_objective(problem)
}

impl SolveResult {
    fn tap_objective(mut self, problem: &OcpProblem) -> Self {
        if self.primal.iter().all(|v| v.is_finite()) {
            self.objective = problem.objective_value(&self.primal);
        }
        self
    }
}

/// Finds a point of the constraint set near `warm` by minimizing the sum of
/// squared violations. The result is `FeasiblePoint` when the violation
/// drops below `tol_feas`, `Infeasible` when the search stalls above it.
pub fn feasibility_phase(problem: &OcpProblem, warm: &[f64], cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let mut z = start_point(problem, warm)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Ok(failure(problem, z));
    }
    let model = LsqModel::feasibility(problem);
    let mut ws = Workspace::new(&model);
    let target = (0.1 * cfg.tol_feas).powi(2);
    let mut best = z.clone();
    let mut best_viol = violation(problem, &z);
    let mut history = Vec::new();
    let mut inner = 0;
    let mut outer = 0;
    let mut stalled = false;
    while outer < cfg.max_outer_iters {
        outer += 1;
        let out = minimize(
            &model,
            &mut ws,
            &mut z,
            &problem.lower,
            &problem.upper,
            LmOptions {
                max_iters: cfg.max_inner_iters,
                gtol: 1e-14,
                phi_target: target,
            },
        );
        inner += out.iters;
        if out.stop == LmStop::NonFinite && out.iters == 0 {
            return Ok(failure(problem, z));
        }
        let viol = violation(problem, &z);
        if viol < best_viol {
            best_viol = viol;
            best.copy_from_slice(&z);
        }
        history.push(best_viol);
        if best_viol <= cfg.tol_feas {
            break;
        }
        if matches!(out.stop, LmStop::Stalled | LmStop::Stationary | LmStop::NonFinite) {
            stalled = true;
            break;
        }
    }
    let status = if best_viol <= cfg.tol_feas {
        Status::FeasiblePoint
    } else if stalled {
        Status::Infeasible
    } else {
        Status::IterationLimit
    };
    Ok(SolveResult {
        status,
        primal: best,
        max_violation: best_viol,
        objective: f64::NAN,
        outer_iters: outer,
        inner_iters: inner,
        violation_history: history,
    }
    .tap_objective(problem))
}

/// Solves the problem from `warm` with an augmented-Lagrangian method.
///
/// The returned primal always satisfies the variable bounds. Problems whose
/// penalized subproblem cannot reach `tol_feas` fall back on the
/// feasibility phase so that the verdict does not depend on the objective.
pub fn solve(problem: &OcpProblem, warm: &[f64], cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let mut z = start_point(problem, warm)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Ok(failure(problem, z));
    }
    let mut model = LsqModel::augmented(problem);
    let mut ws = Workspace::new(&model);
    let mut lambda = vec![0.0; problem.n_eq()];
    let mut mu = vec![0.0; problem.n_ineq()];
    let mut rho = cfg.penalty_init;
    let mut history = Vec::new();
    let mut inner = 0;
    let mut outer = 0;
    let mut prev_viol = f64::INFINITY;
    let mut status = None;
    let mut best: Option<(Vec<f64>, f64)> = None;

    while outer < cfg.max_outer_iters {
        outer += 1;
        model.set_multipliers(rho, &lambda, &mu);
        let gtol = (0.5 * cfg.tol_opt).max(1e-2 * 0.1f64.powi(outer as i32));
        let out = minimize(
            &model,
            &mut ws,
            &mut z,
            &problem.lower,
            &problem.upper,
            LmOptions {
                max_iters: cfg.max_inner_iters,
                gtol,
                phi_target: 0.0,
            },
        );
        inner += out.iters;
        if out.stop == LmStop::NonFinite {
            if out.iters == 0 && outer == 1 {
                return Ok(failure(problem, z));
            }
            break;
        }
        let c = problem.eq_values(&z);
        let g = problem.ineq_values(&z);
        for (l, ci) in lambda.iter_mut().zip(&c) {
            *l += rho * ci;
        }
        for (m, gi) in mu.iter_mut().zip(&g) {
            *m = (*m - rho * gi).max(0.0);
        }
        let viol = violation(problem, &z);
        history.push(viol);
        if viol <= cfg.tol_feas {
            let obj = problem.objective_value(&z);
            if best.as_ref().is_none_or(|(_, o)| obj <= *o) {
                best = Some((z.clone(), obj));
            }
            // stationarity with the updated multipliers equals the
            // projected gradient of the subproblem just solved
            model.set_multipliers(rho, &lambda, &mu);
            let stat = stationarity(&model, &mut ws, &z, problem);
            if stat <= cfg.tol_opt {
                status = Some(Status::Optimal);
                best = Some((z.clone(), obj));
                break;
            }
        }
        if viol > 0.25 * prev_viol || viol > cfg.tol_feas && out.stop == LmStop::Stalled {
            rho = (rho * cfg.penalty_growth).min(1e12);
        }
        prev_viol = viol;
    }

    if let Some((zb, obj)) = best {
        let viol = violation(problem, &zb);
        return Ok(SolveResult {
            status: status.unwrap_or(Status::FeasiblePoint),
            primal: zb,
            max_violation: viol,
            objective: obj,
            outer_iters: outer,
            inner_iters: inner,
            violation_history: history,
        });
    }

    // The penalized problem did not reach the feasible set; decide the
    // verdict on the constraints alone, starting from both candidates.
    let mut fallback = feasibility_phase(problem, &z, cfg)?;
    if !fallback.status.is_feasible() {
        let from_warm = feasibility_phase(problem, warm, cfg)?;
        if from_warm.max_violation < fallback.max_violation {
            fallback = from_warm;
        }
    }
    fallback.outer_iters += outer;
    fallback.inner_iters += inner;
    history.extend(fallback.violation_history);
    fallback.violation_history = history;
    if fallback.status == Status::IterationLimit {
        fallback.status = Status::Infeasible;
    }
    Ok(fallback)
}

fn stationarity(model: &LsqModel, ws: &mut Workspace, z: &[f64], problem: &OcpProblem) -> f64 {
    let mut zc = z.to_vec();
    let out = minimize(
        model,
        ws,
        &mut zc,
        &problem.lower,
        &problem.upper,
        LmOptions {
            max_iters: 0,
            gtol: 0.0,
            phi_target: 0.0,
        },
    );
    // `minimize` reports the projected gradient of 0.5 |r|^2
    2.0 * out.proj_grad
}

/// Worst discrepancy between the analytic block Jacobians and central
/// finite differences at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeReport {
    pub blocks_checked: usize,
    /// `max |J - J_fd| / max(1, |J_fd|)`.
    pub max_rel_error: f64,
}

pub fn check_derivatives(problem: &OcpProblem, z: &[f64], step: f64) -> Result<DerivativeReport> {
    check_dim("point", problem.n_vars, z.len())?;
    let blocks: Vec<_> = problem
        .objective
        .iter()
        .chain(&problem.eq_constraints)
        .chain(&problem.ineq_constraints)
        .collect();
    let mut worst = 0.0f64;
    let mut zp = z.to_vec();
    let mut buf = [0.0; crate::ocp::MAX_INPUTS];
    let (mut hi, mut lo) = ([0.0; crate::ocp::MAX_INPUTS], [0.0; crate::ocp::MAX_INPUTS]);
    for b in &blocks {
        let nv = b.vars.len();
        let mut jac = vec![0.0; b.n_out * nv];
        problem.block_jacobian(b, z, &mut buf[..b.n_out], &mut jac);
        for (c, &v) in b.vars.iter().enumerate() {
            zp[v] = z[v] + step;
            problem.block_value(b, &zp, &mut hi[..b.n_out]);
            zp[v] = z[v] - step;
            problem.block_value(b, &zp, &mut lo[..b.n_out]);
            zp[v] = z[v];
            for r in 0..b.n_out {
                let fd = (hi[r] - lo[r]) / (2.0 * step);
                let err = (jac[r * nv + c] - fd).abs() / fd.abs().max(1.0);
                worst = worst.max(err);
            }
        }
    }
    Ok(DerivativeReport {
        blocks_checked: blocks.len(),
        max_rel_error: worst,
    })
}
