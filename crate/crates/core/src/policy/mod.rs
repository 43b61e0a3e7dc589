//! Characteristic-tilted portfolio rules and the in-sample CRRA objective.
//!
//! A rule tilts the value-weighted market by `(1/N_t) theta' x_{i,t}`:
//!
//! ```text
//! r_p,t = sum_i (w_bar_i,t + theta' x_i,t / N_t) r_i,t
//! ```
//!
//! and `theta` maximizes the mean of `(1 + r_p)^(1 - g) / (1 - g)` over an
//! estimation window, where `g` (the in-sample curvature) may differ from the
//! risk aversion used to judge the rule out of sample.

mod optimize;
mod protocol;

use serde::{Deserialize, Serialize};

use crate::month::Month;
use crate::panel::{CharacteristicSpec, CrossSection};

pub use optimize::{optimize_theta, OptimizeOutcome, Tolerances};
pub use protocol::{
    equal_weighted_path, run_protocol, run_protocol_with, value_weighted_path, PortfolioPath,
    ProtocolRun,
};

#[derive(Debug, Clone, thiserror::Error)]
pub enum PolicyError {
    #[error("dimension mismatch: theta has {actual} entries, cross-section has {expected} characteristics")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("estimation window is empty")]
    EmptyWindow,

    #[error("in-sample curvature must exceed 1, got {0}")]
    InvalidGamma(f64),

    #[error("gradient requested at an infeasible point (some 1 + r_p <= 0)")]
    Infeasible,

    #[error("starting point is infeasible")]
    InfeasibleStart,

    #[error("no convergence after {iterations} iterations (gradient sup-norm {grad_norm:.3e})")]
    NotConverged { theta: Vec<f64>, grad_norm: f64, iterations: usize },

    #[error("estimation for out-of-sample year {year} failed: {source}")]
    YearFailed { year: u32, source: Box<PolicyError> },

    #[error("schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Expanding window: all data before the out-of-sample year.
    Updating,
    /// Fixed-length trailing window.
    Rolling,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Updating => "updating",
            Protocol::Rolling => "rolling",
        }
    }
}

/// The in-sample curvatures studied by default.
pub const DEFAULT_GAMMA_STAR_GRID: [f64; 14] =
    [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 16.0, 22.0];

/// A feasible portfolio rule: characteristic set, in-sample curvature and protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub id: String,
    pub spec: CharacteristicSpec,
    pub gamma_star: f64,
    pub protocol: Protocol,
    /// Trailing window length under [`Protocol::Rolling`].
    #[serde(default = "default_window")]
    pub window_months: usize,
}

fn default_window() -> usize {
    180
}

impl RuleSpec {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.gamma_star > 1.0) || !self.gamma_star.is_finite() {
            return Err(PolicyError::InvalidGamma(self.gamma_star));
        }
        if self.window_months < 24 {
            return Err(PolicyError::Schedule(format!(
                "window of {} months is shorter than 24",
                self.window_months
            )));
        }
        Ok(())
    }
}

/// An estimated coefficient vector with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTheta {
    pub theta: Vec<f64>,
    pub gamma_star: f64,
    /// First and last month of the estimation window.
    pub window: (Month, Month),
    pub spec: CharacteristicSpec,
    pub protocol: Protocol,
    /// Calendar year the coefficients are applied to.
    pub year: u32,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// Mean in-sample utility, or the infeasibility sentinel when some month has `1 + r_p <= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Utility {
    Feasible(f64),
    Infeasible,
}

impl Utility {
    pub fn value(self) -> Option<f64> {
        match self {
            Utility::Feasible(v) => Some(v),
            Utility::Infeasible => None,
        }
    }

    pub fn is_feasible(self) -> bool {
        matches!(self, Utility::Feasible(_))
    }

    /// Total order: every feasible value beats the sentinel.
    pub fn better_than(self, other: Utility) -> bool {
        match (self, other) {
            (Utility::Feasible(a), Utility::Feasible(b)) => a > b,
            (Utility::Feasible(_), Utility::Infeasible) => true,
            (Utility::Infeasible, _) => false,
        }
    }
}

fn check_dims(cs: &CrossSection, theta: &[f64]) -> Result<(), PolicyError> {
    if cs.k() != theta.len() {
        return Err(PolicyError::DimensionMismatch { expected: cs.k(), actual: theta.len() });
    }
    Ok(())
}

fn check_gamma(gamma_star: f64) -> Result<(), PolicyError> {
    if gamma_star > 1.0 && gamma_star.is_finite() {
        Ok(())
    } else {
        Err(PolicyError::InvalidGamma(gamma_star))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Policy weights `w_bar_i + theta' x_i / N`.
pub fn portfolio_weights(cs: &CrossSection, theta: &[f64]) -> Result<Vec<f64>, PolicyError> {
    check_dims(cs, theta)?;
    let inv_n = 1.0 / cs.len() as f64;
    Ok(cs
        .w_bar()
        .iter()
        .enumerate()
        .map(|(i, w)| w + inv_n * dot(theta, cs.row(i)))
        .collect())
}

/// Sum of negative policy weights in one month (zero or below).
pub fn negative_weight_sum(cs: &CrossSection, theta: &[f64]) -> Result<f64, PolicyError> {
    Ok(portfolio_weights(cs, theta)?.into_iter().map(|w| w.min(0.0)).sum())
}

/// Monthly policy return.
pub fn portfolio_return(cs: &CrossSection, theta: &[f64]) -> Result<f64, PolicyError> {
    check_dims(cs, theta)?;
    Ok(fast_return(cs, theta))
}

#[inline]
fn fast_return(cs: &CrossSection, theta: &[f64]) -> f64 {
    cs.market_return() + dot(theta, cs.tilt_return())
}

fn validate_window(window: &[CrossSection], theta: &[f64], gamma_star: f64) -> Result<(), PolicyError> {
    check_gamma(gamma_star)?;
    if window.is_empty() {
        return Err(PolicyError::EmptyWindow);
    }
    window.iter().try_for_each(|cs| check_dims(cs, theta))
}

/// Mean CRRA utility of the policy over `window`.
pub fn objective(window: &[CrossSection], theta: &[f64], gamma_star: f64) -> Result<Utility, PolicyError> {
    validate_window(window, theta, gamma_star)?;
    Ok(objective_unchecked(window, theta, gamma_star))
}

pub(crate) fn objective_unchecked(window: &[CrossSection], theta: &[f64], gamma_star: f64) -> Utility {
    let expo = 1.0 - gamma_star;
    let mut sum = 0.0;
    for cs in window {
        let gross = 1.0 + fast_return(cs, theta);
        if !(gross > 0.0) {
            return Utility::Infeasible;
        }
        sum += gross.powf(expo);
    }
    let value = sum / (expo * window.len() as f64);
    if value.is_finite() {
        Utility::Feasible(value)
    } else {
        Utility::Infeasible
    }
}

/// Analytic gradient `(1/T) sum_t (1 + r_p,t)^(-g) (1/N_t) X_t' r_t`.
pub fn gradient(window: &[CrossSection], theta: &[f64], gamma_star: f64) -> Result<Vec<f64>, PolicyError> {
    validate_window(window, theta, gamma_star)?;
    derivatives(window, theta, gamma_star, false).map(|(g, _)| g)
}

/// Gradient and (optionally) Hessian of the objective.
///
/// The Hessian is `-(g/T) sum_t (1 + r_p,t)^(-g-1) a_t a_t'` with `a_t = (1/N_t) X_t' r_t`,
/// stored row-major.
pub(crate) fn derivatives(
    window: &[CrossSection],
    theta: &[f64],
    gamma_star: f64,
    with_hessian: bool,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    let k = theta.len();
    let mut grad = vec![0.0; k];
    let mut hess = if with_hessian { vec![0.0; k * k] } else { Vec::new() };
    for cs in window {
        let gross = 1.0 + fast_return(cs, theta);
        if !(gross > 0.0) {
            return Err(PolicyError::Infeasible);
        }
        let marg = gross.powf(-gamma_star);
        let a = cs.tilt_return();
        for (g, ai) in grad.iter_mut().zip(a) {
            *g += marg * ai;
        }
        if with_hessian {
            let curv = marg / gross;
            for i in 0..k {
                let ci = curv * a[i];
                for j in i..k {
                    hess[i * k + j] += ci * a[j];
                }
            }
        }
    }
    let inv_t = 1.0 / window.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv_t);
    if with_hessian {
        let scale = -gamma_star * inv_t;
        for i in 0..k {
            for j in i..k {
                let v = hess[i * k + j] * scale;
                hess[i * k + j] = v;
                hess[j * k + i] = v;
            }
        }
    }
    Ok((grad, hess))
}
