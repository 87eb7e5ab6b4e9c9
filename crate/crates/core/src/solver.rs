//! Levenberg-Marquardt iteration for the LOVO objective.
//!
//! Each outer iteration picks the `p` smallest residuals at the current
//! point, builds the damped Gauss-Newton system for that subset with
//! `gamma = lambda * |grad|^2`, and escalates `lambda` until the step is
//! accepted. Steps are accepted on simple decrease of `S_p` by default, or
//! on the actual/predicted reduction ratio when [`Acceptance::RhoTest`] is
//! selected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm2, Cholesky, Matrix};
use crate::lovo::{active_jacobian, select_active, sp_value, ActiveSet, LovoProblem};

/// Step acceptance rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acceptance {
    /// Accept when `S_p(x + d) < S_p(x)`.
    #[default]
    SimpleDecrease,
    /// Accept when the reduction ratio is at least `mu`.
    RhoTest { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Stop when the active-set gradient norm is at most this value.
    pub eps_grad: f64,
    pub lambda0: f64,
    pub lambda_min: f64,
    /// Damping growth factor on rejection (and shrink factor on success).
    pub lambda_bar: f64,
    pub max_iter: usize,
    /// Consecutive rejections tolerated within one outer iteration.
    pub max_inner: usize,
    pub acceptance: Acceptance,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            eps_grad: 1e-4,
            lambda0: 1.0,
            lambda_min: 1e-16,
            lambda_bar: 2.0,
            max_iter: 400,
            max_inner: 50,
            acceptance: Acceptance::SimpleDecrease,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(what.to_string()));
        if !(self.eps_grad > 0.0) {
            return bad("eps_grad must be positive");
        }
        if !(self.lambda0 > 0.0) || !(self.lambda_min > 0.0) {
            return bad("lambda0 and lambda_min must be positive");
        }
        if !(self.lambda_bar > 1.0) {
            return bad("lambda_bar must exceed 1");
        }
        if self.max_inner == 0 {
            return bad("max_inner must be at least 1");
        }
        if let Acceptance::RhoTest { mu } = self.acceptance {
            if !(mu > 0.0 && mu < 1.0) {
                return bad("mu must lie in (0, 1)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    NumericError,
    InnerStall,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::NumericError => "numeric_error",
            Status::InnerStall => "inner_stall",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOutcome {
    pub x: Vec<f64>,
    pub status: Status,
    /// Accepted steps.
    pub iterations: usize,
    /// `S_p(x)`; NaN when the objective could not be evaluated at `x`.
    pub sp: f64,
    pub grad_norm: f64,
    pub active_indices: Vec<usize>,
}

impl SolverOutcome {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// One step attempt, accepted or not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// `S_p` at the current iterate.
    pub sp: f64,
    pub grad_norm: f64,
    /// `S_p` at the trial point, NaN if it could not be evaluated.
    pub trial_sp: f64,
    /// Reduction ratio, when the acceptance rule computed it.
    pub rho: Option<f64>,
    pub accepted: bool,
}

/// Solve `(J^T J + gamma I) d = -J^T F` by Cholesky factorization.
pub fn lm_direction(jac: &Matrix, f: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParams(format!("damping {gamma} must be positive")));
    }
    let g = jac.tr_mul_vec(f);
    let ch = Cholesky::factor(&jac.gram_shifted(gamma))?;
    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
    Ok(ch.solve(&neg))
}

/// Predicted reduction `m(0) - m(d)` of the damped linear model.
fn predicted_decrease(jac: &Matrix, f: &[f64], d: &[f64], gamma: f64) -> f64 {
    let jd = jac.mul_vec(d);
    let m0: f64 = 0.5 * f.iter().map(|v| v * v).sum::<f64>();
    let md: f64 = 0.5 * f.iter().zip(&jd).map(|(a, b)| (a + b) * (a + b)).sum::<f64>()
        + 0.5 * gamma * d.iter().map(|v| v * v).sum::<f64>();
    m0 - md
}

fn ratio(actual: f64, predicted: f64) -> Result<f64> {
    if !(predicted > 0.0) || !predicted.is_finite() {
        return Err(Error::DegenerateModel(predicted));
    }
    Ok(actual / predicted)
}

/// Ratio of actual to predicted decrease for the step `d` from `x`.
///
/// `active` must have been computed at `x`. `gamma` may be zero.
pub fn rho(
    problem: &LovoProblem<'_>,
    x: &[f64],
    d: &[f64],
    active: &ActiveSet,
    gamma: f64,
) -> Result<f64> {
    let jac = active_jacobian(problem, x, active)?;
    let f = active.active_residuals();
    let predicted = predicted_decrease(&jac, &f, d, gamma);
    let trial: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
    let actual = active.sp_value - sp_value(problem, &trial)?;
    ratio(actual, predicted)
}

/// Run the solver from `x0`.
pub fn solve(problem: &LovoProblem<'_>, x0: &[f64], params: &SolverParams) -> SolverOutcome {
    solve_traced(problem, x0, params, |_| {})
}

/// Like [`solve`], reporting every step attempt to `on_step`.
pub fn solve_traced<F>(
    problem: &LovoProblem<'_>,
    x0: &[f64],
    params: &SolverParams,
    mut on_step: F,
) -> SolverOutcome
where
    F: FnMut(&TraceEntry),
{
    let numeric_failure = |x: Vec<f64>, iterations: usize| SolverOutcome {
        x,
        status: Status::NumericError,
        iterations,
        sp: f64::NAN,
        grad_norm: f64::NAN,
        active_indices: Vec::new(),
    };

    let mut x = x0.to_vec();
    if x.len() != problem.n_params() || x.iter().any(|v| !v.is_finite()) {
        return numeric_failure(x, 0);
    }
    let mut active = match select_active(problem, &x) {
        Ok(a) => a,
        Err(e) => {
            log::debug!(target: "raff::lm", "objective failed at start: {e}");
            return numeric_failure(x, 0);
        }
    };
    let mut lambda = params.lambda0;
    let mut iterations = 0;

    loop {
        let jac = match active_jacobian(problem, &x, &active) {
            Ok(j) => j,
            Err(e) => {
                log::debug!(target: "raff::lm", "jacobian failed: {e}");
                let mut out = numeric_failure(x, iterations);
                out.sp = active.sp_value;
                out.active_indices = active.indices;
                return out;
            }
        };
        let f = active.active_residuals();
        let grad = jac.tr_mul_vec(&f);
        let grad_norm = norm2(&grad);
        let finish = |status, x: Vec<f64>, active: ActiveSet| SolverOutcome {
            x,
            status,
            iterations,
            sp: active.sp_value,
            grad_norm,
            active_indices: active.indices,
        };
        if !grad_norm.is_finite() {
            return finish(Status::NumericError, x, active);
        }
        if grad_norm <= params.eps_grad {
            return finish(Status::Converged, x, active);
        }
        if iterations >= params.max_iter {
            return finish(Status::MaxIter, x, active);
        }

        let mut rejections = 0;
        let next = loop {
            let gamma = lambda * grad_norm * grad_norm;
            let step = lm_direction(&jac, &f, gamma).ok().and_then(|d| {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
                select_active(problem, &trial).ok().map(|a| (d, trial, a))
            });
            let (accepted, trial_sp, rho_value, candidate) = match step {
                Some((d, trial, trial_active)) => {
                    let (ok, rho_value) = match params.acceptance {
                        Acceptance::SimpleDecrease => (trial_active.sp_value < active.sp_value, None),
                        Acceptance::RhoTest { mu } => {
                            let pred = predicted_decrease(&jac, &f, &d, gamma);
                            match ratio(active.sp_value - trial_active.sp_value, pred) {
                                Ok(r) => (r >= mu, Some(r)),
                                Err(_) => (false, None),
                            }
                        }
                    };
                    (ok, trial_active.sp_value, rho_value, Some((trial, trial_active)))
                }
                None => (false, f64::NAN, None, None),
            };
            let entry = TraceEntry {
                iteration: iterations,
                lambda,
                gamma,
                sp: active.sp_value,
                grad_norm,
                trial_sp,
                rho: rho_value,
                accepted,
            };
            log::debug!(
                target: "raff::lm",
                "iter={} lambda={:e} gamma={:e} sp={:e} grad_norm={:e} trial_sp={:e} accepted={}",
                entry.iteration,
                entry.lambda,
                entry.gamma,
                entry.sp,
                entry.grad_norm,
                entry.trial_sp,
                entry.accepted
            );
            on_step(&entry);
            if accepted {
                break candidate;
            }
            lambda *= params.lambda_bar;
            rejections += 1;
            if rejections >= params.max_inner {
                break None;
            }
        };

        match next {
            Some((trial, trial_active)) => {
                lambda = (lambda / params.lambda_bar).max(params.lambda_min);
                x = trial;
                active = trial_active;
                iterations += 1;
            }
            None => return finish(Status::InnerStall, x, active),
        }
    }
}
