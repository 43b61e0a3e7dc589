use serde::{Deserialize, Serialize};

use super::EvalError;

/// Gaussian value of the tail-to-half mean ratio; subtracted so normal data score 0.
const GAUSSIAN_TAIL_RATIO: f64 = 2.63;

/// Empirical quantile of sorted data by linear interpolation between order
/// statistics at position `h = (n - 1) p + 1` (1-based).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustMoments {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub iqr: f64,
    pub min: f64,
    /// `(mean - median) / sd`.
    pub s4: f64,
    /// Tail-mean spread over half-mean spread, minus 2.63.
    pub k3: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Location, dispersion and robust shape of a return series (at least 40 points).
///
/// Tails hold `ceil(0.05 n)` observations each; the halves hold `floor(n / 2)`
/// each, so an odd middle observation belongs to neither.
pub fn robust_moments(returns: &[f64]) -> Result<RobustMoments, EvalError> {
    let n = returns.len();
    if n < 40 {
        return Err(EvalError::InsufficientData { required: 40, actual: n });
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mu = mean(&sorted);
    let sd = (sorted.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let median = quantile_sorted(&sorted, 0.5);
    if sorted[0] == sorted[n - 1] || !(sd > 0.0) {
        return Err(EvalError::ZeroDispersion("S4"));
    }

    let tail = (n * 5).div_ceil(100);
    let half = n / 2;
    let top_tail = mean(&sorted[n - tail..]);
    let bottom_tail = mean(&sorted[..tail]);
    let top_half = mean(&sorted[n - half..]);
    let bottom_half = mean(&sorted[..half]);
    let half_spread = top_half - bottom_half;
    if !(half_spread > 0.0) {
        return Err(EvalError::ZeroDispersion("K3"));
    }

    Ok(RobustMoments {
        mean: mu,
        sd,
        median,
        iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
        min: sorted[0],
        s4: (mu - median) / sd,
        k3: (top_tail - bottom_tail) / half_spread - GAUSSIAN_TAIL_RATIO,
    })
}
