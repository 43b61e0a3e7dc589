use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{derivatives, objective_unchecked, validate_window, PolicyError, Utility};
use crate::panel::CrossSection;

/// Stopping and line-search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Sup-norm gradient tolerance, scaled by `max(1, |objective|)`.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub initial_step: f64,
    /// Armijo sufficient-increase constant.
    pub armijo_c: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 2_000,
            initial_step: 1.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
            max_backtracks: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton direction from the negated Hessian; `None` when it is not positive definite.
fn newton_direction(grad: &[f64], hess: &[f64]) -> Option<Vec<f64>> {
    let k = grad.len();
    let neg_h = DMatrix::from_row_slice(k, k, hess).map(|v| -v);
    let chol = neg_h.cholesky()?;
    let d = chol.solve(&DVector::from_column_slice(grad));
    let d: Vec<f64> = d.iter().copied().collect();
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Maximizes the window objective from `init`.
///
/// Each step takes the Newton direction (exact Hessian; the objective is
/// concave) or the gradient when the Hessian is singular, with Armijo
/// backtracking. Trial points that make any `1 + r_p <= 0` count as failed
/// trials, so the iterate path stays feasible.
pub fn optimize_theta(
    window: &[CrossSection],
    gamma_star: f64,
    init: &[f64],
    tol: &Tolerances,
) -> Result<OptimizeOutcome, PolicyError> {
    validate_window(window, init, gamma_star)?;
    let mut theta = init.to_vec();
    let mut f = objective_unchecked(window, &theta, gamma_star)
        .value()
        .ok_or(PolicyError::InfeasibleStart)?;
    if theta.is_empty() {
        return Ok(OptimizeOutcome { theta, objective: f, grad_norm: 0.0, iterations: 0 });
    }

    let mut trial = vec![0.0; theta.len()];
    for iter in 0..tol.max_iters {
        let (grad, hess) = derivatives(window, &theta, gamma_star, true)?;
        let grad_norm = sup_norm(&grad);
        if grad_norm < tol.grad_tol * f.abs().max(1.0) {
            return Ok(OptimizeOutcome { theta, objective: f, grad_norm, iterations: iter });
        }

        let mut accepted = false;
        let newton = newton_direction(&grad, &hess);
        for direction in newton.iter().chain(std::iter::once(&grad)) {
            let slope: f64 = direction.iter().zip(&grad).map(|(d, g)| d * g).sum();
            if !(slope > 0.0) {
                continue;
            }
            let mut step = tol.initial_step;
            for _ in 0..tol.max_backtracks {
                for ((t, th), d) in trial.iter_mut().zip(&theta).zip(direction) {
                    *t = th + step * d;
                }
                if let Utility::Feasible(ft) = objective_unchecked(window, &trial, gamma_star) {
                    let sufficient = ft >= f + tol.armijo_c * step * slope;
                    // near the optimum the predicted gain drops below rounding noise
                    let noise_floor = 8.0 * f64::EPSILON * f.abs().max(1.0);
                    let negligible = step * slope < noise_floor && ft >= f - noise_floor;
                    if sufficient || negligible {
                        std::mem::swap(&mut theta, &mut trial);
                        f = ft;
                        accepted = true;
                        break;
                    }
                }
                step *= tol.backtrack;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            return Err(PolicyError::NotConverged { theta, grad_norm, iterations: iter });
        }
    }
    let (grad, _) = derivatives(window, &theta, gamma_star, false)?;
    let grad_norm = sup_norm(&grad);
    if grad_norm < tol.grad_tol * f.abs().max(1.0) {
        return Ok(OptimizeOutcome { theta, objective: f, grad_norm, iterations: tol.max_iters });
    }
    Err(PolicyError::NotConverged { theta, grad_norm, iterations: tol.max_iters })
}
