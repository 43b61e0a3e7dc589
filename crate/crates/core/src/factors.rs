//! Four-factor (market, size, value, momentum) regressions of portfolio
//! excess returns and the additive decomposition of portfolio variance.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::month::Month;
use crate::policy::PortfolioPath;

pub const FACTOR_NAMES: [&str; 4] = ["MKT", "SMB", "HML", "MOM"];

/// Factor index pairs in the order cross shares are stored.
pub const FACTOR_PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, thiserror::Error)]
pub enum FactorError {
    #[error("need at least {required} observations, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("factor design matrix is rank deficient")]
    RankDeficient,

    #[error("total variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("factor panel has no data for month {0}")]
    MissingMonth(Month),

    #[error("factor file line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Monthly factor returns as fractions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FactorPanel {
    pub months: Vec<Month>,
    pub mkt_rf: Vec<f64>,
    pub smb: Vec<f64>,
    pub hml: Vec<f64>,
    pub mom: Vec<f64>,
    pub rf: Vec<f64>,
}

impl FactorPanel {
    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn factor(&self, j: usize) -> &[f64] {
        match j {
            0 => &self.mkt_rf,
            1 => &self.smb,
            2 => &self.hml,
            3 => &self.mom,
            _ => panic!("factor index {j} out of range"),
        }
    }

    pub fn push(&mut self, month: Month, mkt_rf: f64, smb: f64, hml: f64, mom: f64, rf: f64) {
        self.months.push(month);
        self.mkt_rf.push(mkt_rf);
        self.smb.push(smb);
        self.hml.push(hml);
        self.mom.push(mom);
        self.rf.push(rf);
    }

    /// Rows for `months`, in that order.
    pub fn aligned(&self, months: &[Month]) -> Result<FactorPanel, FactorError> {
        let index: BTreeMap<Month, usize> = self.months.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        let mut out = FactorPanel::default();
        for &m in months {
            let i = *index.get(&m).ok_or(FactorError::MissingMonth(m))?;
            out.push(m, self.mkt_rf[i], self.smb[i], self.hml[i], self.mom[i], self.rf[i]);
        }
        Ok(out)
    }

    /// Reads `month,mkt_rf,smb,hml,mom,rf`; percent values are divided by 100 when `percent_units`.
    pub fn read_csv<R: Read>(source: R, percent_units: bool) -> Result<Self, FactorError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
        let header = reader
            .headers()
            .map_err(|e| FactorError::Malformed { line: 1, message: e.to_string() })?
            .clone();
        let cols: Vec<usize> = ["month", "mkt_rf", "smb", "hml", "mom", "rf"]
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h.trim().eq_ignore_ascii_case(name))
                    .ok_or_else(|| FactorError::Malformed { line: 1, message: format!("missing column `{name}`") })
            })
            .collect::<Result<_, _>>()?;
        let scale = if percent_units { 0.01 } else { 1.0 };
        let mut out = FactorPanel::default();
        for rec in reader.records() {
            let rec = rec.map_err(|e| FactorError::Malformed {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let get = |j: usize| rec.get(cols[j]).unwrap_or("").trim();
            let month = get(0)
                .parse::<u32>()
                .ok()
                .and_then(Month::from_yyyymm)
                .ok_or_else(|| FactorError::Malformed { line, message: format!("bad month `{}`", get(0)) })?;
            let mut v = [0.0; 5];
            for (slot, j) in v.iter_mut().zip(1..6) {
                *slot = get(j).parse::<f64>().map_err(|_| FactorError::Malformed {
                    line,
                    message: format!("cannot parse `{}`", get(j)),
                })? * scale;
            }
            out.push(month, v[0], v[1], v[2], v[3], v[4]);
        }
        Ok(out)
    }

    /// Writes fractions in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "month,mkt_rf,smb,hml,mom,rf")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.months[i], self.mkt_rf[i], self.smb[i], self.hml[i], self.mom[i], self.rf[i]
            )?;
        }
        out.flush()
    }
}

/// OLS fit of excess portfolio returns on the four factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FfcFit {
    /// Intercept as a monthly fraction.
    pub alpha: f64,
    pub betas: [f64; 4],
    /// Residual variance with the `n - 5` divisor.
    pub residual_variance: f64,
    pub residuals: Vec<f64>,
}

impl FfcFit {
    pub fn alpha_bp(&self) -> f64 {
        self.alpha * 10_000.0
    }
}

/// Regresses `path - rf` on a constant and the four factors (months must match the path).
pub fn regress_ffc(path: &PortfolioPath, factors: &FactorPanel) -> Result<FfcFit, FactorError> {
    let f = factors.aligned(&path.months)?;
    let n = f.len();
    if n < 10 {
        return Err(FactorError::InsufficientData { required: 10, actual: n });
    }
    let y = DVector::from_iterator(n, path.returns.iter().zip(&f.rf).map(|(r, rf)| r - rf));
    let x = DMatrix::from_fn(n, 5, |i, j| if j == 0 { 1.0 } else { f.factor(j - 1)[i] });

    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = (0..5).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..5).any(|j| !(r[(j, j)].abs() > 1e-10 * diag_max)) {
        return Err(FactorError::RankDeficient);
    }
    let qty = qr.q().transpose() * &y;
    let coef = r.solve_upper_triangular(&qty).ok_or(FactorError::RankDeficient)?;
    let residuals: Vec<f64> = (&y - &x * &coef).iter().copied().collect();
    let sse: f64 = residuals.iter().map(|e| e * e).sum();
    Ok(FfcFit {
        alpha: coef[0],
        betas: [coef[1], coef[2], coef[3], coef[4]],
        residual_variance: sse / (n - 5) as f64,
        residuals,
    })
}

/// Sample (n-1) covariance matrix of the four factors.
pub fn factor_covariance(factors: &FactorPanel) -> [[f64; 4]; 4] {
    let n = factors.len() as f64;
    let means: Vec<f64> = (0..4).map(|j| factors.factor(j).iter().sum::<f64>() / n).collect();
    let mut cov = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in a..4 {
            let s: f64 = factors
                .factor(a)
                .iter()
                .zip(factors.factor(b))
                .map(|(x, y)| (x - means[a]) * (y - means[b]))
                .sum();
            cov[a][b] = s / (n - 1.0);
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

/// Fractions of portfolio variance by source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceShares {
    /// `beta_k^2 Var(f_k) / Var(r_p)`.
    pub own: [f64; 4],
    /// `2 beta_j beta_k Cov(f_j, f_k) / Var(r_p)`, ordered as [`FACTOR_PAIRS`].
    pub cross: [f64; 6],
    /// Residual variance over total variance.
    pub orthogonal: f64,
}

impl VarianceShares {
    pub fn total(&self) -> f64 {
        self.own.iter().sum::<f64>() + self.cross.iter().sum::<f64>() + self.orthogonal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub alpha_bp: f64,
    pub betas: [f64; 4],
    pub shares: VarianceShares,
}

/// Splits `total_variance` into own, cross and residual components.
///
/// The shares sum to one exactly when `total_variance = beta' cov beta + residual_variance`,
/// which holds for an OLS fit when all variances share the same divisor.
pub fn variance_decomposition(
    betas: &[f64; 4],
    cov: &[[f64; 4]; 4],
    residual_variance: f64,
    total_variance: f64,
) -> Result<VarianceShares, FactorError> {
    if !(total_variance > 0.0) {
        return Err(FactorError::NonPositiveVariance(total_variance));
    }
    let own = std::array::from_fn(|k| betas[k] * betas[k] * cov[k][k] / total_variance);
    let cross = std::array::from_fn(|p| {
        let (j, k) = FACTOR_PAIRS[p];
        2.0 * betas[j] * betas[k] * cov[j][k] / total_variance
    });
    Ok(VarianceShares { own, cross, orthogonal: residual_variance / total_variance })
}

/// Regression plus variance decomposition of one path.
///
/// Factor covariances, residual variance and total variance all use the
/// `n - 1` divisor here so the shares add up to one.
pub fn decompose(path: &PortfolioPath, factors: &FactorPanel) -> Result<Decomposition, FactorError> {
    let fit = regress_ffc(path, factors)?;
    let f = factors.aligned(&path.months)?;
    let n = f.len() as f64;
    let excess: Vec<f64> = path.returns.iter().zip(&f.rf).map(|(r, rf)| r - rf).collect();
    let mean = excess.iter().sum::<f64>() / n;
    let total = excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let resid = fit.residuals.iter().map(|e| e * e).sum::<f64>() / (n - 1.0);
    let shares = variance_decomposition(&fit.betas, &factor_covariance(&f), resid, total)?;
    Ok(Decomposition { alpha_bp: fit.alpha_bp(), betas: fit.betas, shares })
}

/// Label for a component of [`VarianceShares`]: factor names, `Cov(A,B)`, or `Orthogonal`.
pub fn cross_label(pair: usize) -> String {
    let (j, k) = FACTOR_PAIRS[pair];
    format!("Cov({},{})", FACTOR_NAMES[j], FACTOR_NAMES[k])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentReport {
    pub entries: Vec<(String, f64)>,
    /// False when a non-zero cross term was suppressed.
    pub sums_to_unity: bool,
}

/// Own shares and the orthogonal share always; cross terms only when `|share| > threshold`.
pub fn report_components(shares: &VarianceShares, threshold: f64) -> ComponentReport {
    let mut entries: Vec<(String, f64)> =
        FACTOR_NAMES.iter().zip(shares.own).map(|(n, s)| (n.to_string(), s)).collect();
    let mut sums_to_unity = true;
    for (p, &s) in shares.cross.iter().enumerate() {
        if s.abs() > threshold {
            entries.push((cross_label(p), s));
        } else if s != 0.0 {
            sums_to_unity = false;
        }
    }
    entries.push(("Orthogonal".into(), shares.orthogonal));
    ComponentReport { entries, sums_to_unity }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSummary {
    /// Mean factor returns, bp per month.
    pub means_bp: [f64; 4],
    /// Standard deviations (percent per month) on the diagonal, correlations off it.
    pub vol_corr: [[f64; 4]; 4],
}

pub fn factor_summary(factors: &FactorPanel) -> FactorSummary {
    let n = factors.len() as f64;
    let cov = factor_covariance(factors);
    let means_bp = std::array::from_fn(|j| factors.factor(j).iter().sum::<f64>() / n * 10_000.0);
    let vol_corr = std::array::from_fn(|a| {
        std::array::from_fn(|b| {
            if a == b {
                cov[a][a].sqrt() * 100.0
            } else {
                cov[a][b] / (cov[a][a] * cov[b][b]).sqrt()
            }
        })
    });
    FactorSummary { means_bp, vol_corr }
}
