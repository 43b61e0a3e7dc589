//! Out-of-sample performance measures and sampling-distribution summaries.
//!
//! Units: certainty equivalents are in basis points per month; the robust
//! moments are returned as fractions (callers scale for display); leverage is
//! in percent.

mod density;
mod distribution;
mod moments;

pub use density::{export_density, write_density_csv, DensityBin};
pub use distribution::{dominates, rank_rules, summarize, MetricSummary, Ranking, SamplingDistribution};
pub use moments::{quantile_sorted, robust_moments, RobustMoments};

use crate::policy::PortfolioPath;

/// Certainty equivalent reported when any monthly return is at or below -100%.
pub const CE_SENTINEL_BP: f64 = -10_000.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("return series is empty")]
    Empty,

    #[error("risk aversion must exceed 1, got {0}")]
    InvalidGamma(f64),

    #[error("need at least {required} observations, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("{0} is undefined: zero dispersion")]
    ZeroDispersion(&'static str),

    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("every replicate failed ({0} failures)")]
    AllFailed(usize),

    #[error("bin width must be positive, got {0}")]
    InvalidBinWidth(f64),

    #[error("nothing to rank")]
    NothingToRank,
}

/// CRRA certainty equivalent in basis points per month.
///
/// Solves `u(1 + CE) = mean u(1 + r)` for `u(R) = R^(1-g)/(1-g)`. The mean is
/// accumulated in log space around the largest term so constant paths return
/// their constant to rounding accuracy. Terms are summed in sorted order, so
/// the result does not depend on the order of `returns`. Any return `<= -1`
/// yields exactly [`CE_SENTINEL_BP`].
pub fn certainty_equivalent(returns: &[f64], gamma: f64) -> Result<f64, EvalError> {
    if returns.is_empty() {
        return Err(EvalError::Empty);
    }
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(EvalError::InvalidGamma(gamma));
    }
    if returns.iter().any(|&r| !(r > -1.0)) {
        return Ok(CE_SENTINEL_BP);
    }
    let expo = 1.0 - gamma;
    let mut logs: Vec<f64> = returns.iter().map(|r| expo * r.ln_1p()).collect();
    logs.sort_by(f64::total_cmp);
    let top = logs[logs.len() - 1];
    let scaled_mean = logs.iter().map(|u| (u - top).exp()).sum::<f64>() / logs.len() as f64;
    let log_mean = top + scaled_mean.ln();
    Ok((log_mean / expo).exp_m1() * 10_000.0)
}

/// `mean(r - rf) / sd(r - rf) * sqrt(12)` with the sample standard deviation.
pub fn sharpe_annualized(returns: &[f64], rf: &[f64]) -> Result<f64, EvalError> {
    if returns.len() != rf.len() {
        return Err(EvalError::LengthMismatch(returns.len(), rf.len()));
    }
    if returns.len() < 2 {
        return Err(EvalError::InsufficientData { required: 2, actual: returns.len() });
    }
    let excess: Vec<f64> = returns.iter().zip(rf).map(|(r, f)| r - f).collect();
    let n = excess.len() as f64;
    let mean = excess.iter().sum::<f64>() / n;
    let var = excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if excess.iter().all(|e| *e == excess[0]) || !(var > 0.0) {
        return Err(EvalError::ZeroDispersion("Sharpe ratio"));
    }
    Ok(mean / var.sqrt() * 12f64.sqrt())
}

/// Time-series mean of the monthly negative-weight sum, in percent.
pub fn leverage(path: &PortfolioPath) -> f64 {
    if path.neg_weight_sum.is_empty() {
        return 0.0;
    }
    100.0 * path.neg_weight_sum.iter().sum::<f64>() / path.neg_weight_sum.len() as f64
}
