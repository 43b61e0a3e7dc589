use serde::{Deserialize, Serialize};

use super::{
    fast_return, negative_weight_sum, optimize_theta, OptimizeOutcome, PolicyError, PolicyTheta,
    Protocol, RuleSpec, Tolerances,
};
use crate::month::Month;
use crate::panel::{CrossSection, Panel};

/// Out-of-sample monthly returns of one rule on one (pseudo)sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PortfolioPath {
    pub months: Vec<Month>,
    pub returns: Vec<f64>,
    /// Per-month sum of negative weights (zero or below).
    pub neg_weight_sum: Vec<f64>,
}

impl PortfolioPath {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRun {
    pub thetas: Vec<PolicyTheta>,
    pub path: PortfolioPath,
}

struct Schedule {
    first_oos: usize,
    years: usize,
}

fn schedule(panel: &Panel, rule: &RuleSpec) -> Result<Schedule, PolicyError> {
    rule.validate()?;
    if panel.spec.k() != rule.spec.k() {
        return Err(PolicyError::DimensionMismatch { expected: panel.spec.k(), actual: rule.spec.k() });
    }
    let first_oos = panel.first_oos;
    if first_oos < 24 {
        return Err(PolicyError::Schedule(format!(
            "in-sample period of {first_oos} months is shorter than 24"
        )));
    }
    if rule.protocol == Protocol::Rolling && first_oos < rule.window_months {
        return Err(PolicyError::Schedule(format!(
            "rolling window of {} months exceeds the {first_oos}-month in-sample period",
            rule.window_months
        )));
    }
    let years = panel.len().saturating_sub(first_oos) / 12;
    if years == 0 {
        return Err(PolicyError::Schedule(format!(
            "panel of {} months leaves no complete out-of-sample year after month {first_oos}",
            panel.len()
        )));
    }
    Ok(Schedule { first_oos, years })
}

/// Annual re-estimation with a caller-supplied estimator.
///
/// For each out-of-sample year, `estimate(window, warm_start)` produces
/// coefficients that are then applied to the following 12 months. The warm
/// start is the previous year's coefficients (zero in year one).
pub fn run_protocol_with<F>(panel: &Panel, rule: &RuleSpec, mut estimate: F) -> Result<ProtocolRun, PolicyError>
where
    F: FnMut(&[CrossSection], &[f64]) -> Result<OptimizeOutcome, PolicyError>,
{
    let Schedule { first_oos, years } = schedule(panel, rule)?;
    let k = rule.spec.k();
    let mut warm = vec![0.0; k];
    let mut thetas = Vec::with_capacity(years);
    let mut path = PortfolioPath::default();
    for y in 0..years {
        let start = first_oos + 12 * y;
        let window_start = match rule.protocol {
            Protocol::Updating => 0,
            Protocol::Rolling => start - rule.window_months,
        };
        let window = &panel.sections[window_start..start];
        let year = panel.sections[start].month().year();
        let fit = estimate(window, &warm)
            .map_err(|e| PolicyError::YearFailed { year, source: Box::new(e) })?;

        for cs in &panel.sections[start..start + 12] {
            path.months.push(cs.month());
            path.returns.push(fast_return(cs, &fit.theta));
            path.neg_weight_sum.push(negative_weight_sum(cs, &fit.theta)?);
        }
        warm.clone_from(&fit.theta);
        thetas.push(PolicyTheta {
            theta: fit.theta,
            gamma_star: rule.gamma_star,
            window: (window[0].month(), window[window.len() - 1].month()),
            spec: rule.spec.clone(),
            protocol: rule.protocol,
            year,
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
        });
    }
    Ok(ProtocolRun { thetas, path })
}

/// Annual re-estimation by maximizing the in-sample objective.
pub fn run_protocol(panel: &Panel, rule: &RuleSpec, tol: &Tolerances) -> Result<ProtocolRun, PolicyError> {
    run_protocol_with(panel, rule, |window, warm| optimize_theta(window, rule.gamma_star, warm, tol))
}

fn oos_sections(panel: &Panel) -> &[CrossSection] {
    let years = panel.len().saturating_sub(panel.first_oos) / 12;
    &panel.sections[panel.first_oos..panel.first_oos + 12 * years]
}

/// Value-weighted benchmark over the out-of-sample months (complete years only).
pub fn value_weighted_path(panel: &Panel) -> PortfolioPath {
    let s = oos_sections(panel);
    PortfolioPath {
        months: s.iter().map(|c| c.month()).collect(),
        returns: s.iter().map(|c| c.market_return()).collect(),
        neg_weight_sum: vec![0.0; s.len()],
    }
}

/// Equal-weighted benchmark over the out-of-sample months (complete years only).
pub fn equal_weighted_path(panel: &Panel) -> PortfolioPath {
    let s = oos_sections(panel);
    PortfolioPath {
        months: s.iter().map(|c| c.month()).collect(),
        returns: s.iter().map(|c| c.equal_weight_return()).collect(),
        neg_weight_sum: vec![0.0; s.len()],
    }
}
