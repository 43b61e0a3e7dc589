use std::collections::BTreeMap;

use serde::Serialize;

use super::{CandidateObs, Exchange, PanelError, RawObs, RawPanel, RawSection};
use crate::month::Month;

/// Price index used to hold the minimum size criterion fixed in real terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Deflator {
    levels: BTreeMap<Month, f64>,
}

impl Deflator {
    pub fn new(levels: BTreeMap<Month, f64>) -> Self {
        Self { levels }
    }

    /// Constant index: nominal and real sizes coincide.
    pub fn flat(months: impl IntoIterator<Item = Month>) -> Self {
        Self { levels: months.into_iter().map(|m| (m, 1.0)).collect() }
    }

    pub fn level(&self, month: Month) -> Result<f64, PanelError> {
        self.levels.get(&month).copied().ok_or(PanelError::DeflatorGap(month))
    }
}

/// Sample inclusion rules applied month by month.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Minimum market cap in `deflator_base` currency units.
    pub min_real_size: f64,
    pub deflator: Deflator,
    pub deflator_base: Month,
    /// Fraction of the smallest survivors dropped before `breakpoint_month`.
    pub small_pct_before: f64,
    /// Fraction dropped from `breakpoint_month` on.
    pub small_pct_after: f64,
    pub breakpoint_month: Month,
    /// Substitute for a missing return on NYSE/AMEX (and unclassified) stocks.
    pub delist_sub_nyse_amex: f64,
    pub delist_sub_nasdaq: f64,
    /// Consecutive return months required before a stock is eligible.
    pub history_months: usize,
    /// Require a positive book value for every stock-month.
    pub strict_paper_inclusion: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_real_size: 50.0e6,
            deflator: Deflator::default(),
            deflator_base: Month::from_yyyymm(199001).unwrap(),
            small_pct_before: 0.10,
            small_pct_after: 0.20,
            breakpoint_month: Month::from_yyyymm(197801).unwrap(),
            delist_sub_nyse_amex: -0.30,
            delist_sub_nasdaq: -0.50,
            history_months: 60,
            strict_paper_inclusion: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), PanelError> {
        for (name, v) in [("small_pct_before", self.small_pct_before), ("small_pct_after", self.small_pct_after)] {
            if !(0.0..1.0).contains(&v) {
                return Err(PanelError::InvalidFilter(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.min_real_size >= 0.0) {
            return Err(PanelError::InvalidFilter("min_real_size must be non-negative".into()));
        }
        Ok(())
    }

    /// Nominal size threshold for a capitalization observed at `cap_month`.
    pub fn nominal_threshold(&self, cap_month: Month) -> Result<f64, PanelError> {
        let base = self.deflator.level(self.deflator_base)?;
        Ok(self.min_real_size * self.deflator.level(cap_month)? / base)
    }

    fn small_pct(&self, month: Month) -> f64 {
        if month < self.breakpoint_month {
            self.small_pct_before
        } else {
            self.small_pct_after
        }
    }

    fn substitute_return(&self, exchange: Exchange) -> f64 {
        match exchange {
            Exchange::Nasdaq => self.delist_sub_nasdaq,
            Exchange::Nyse | Exchange::Amex | Exchange::Other => self.delist_sub_nyse_amex,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MonthFilterCounts {
    pub month: Month,
    pub candidates: usize,
    pub below_min_size: usize,
    pub smallest_pct: usize,
    pub substituted_returns: usize,
    pub kept: usize,
}

/// Per-month provenance of the filtering step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterLog {
    pub months: Vec<MonthFilterCounts>,
}

impl FilterLog {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "month,candidates,below_min_size,smallest_pct,substituted_returns,kept")?;
        for m in &self.months {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                m.month, m.candidates, m.below_min_size, m.smallest_pct, m.substituted_returns, m.kept
            )?;
        }
        out.flush()
    }
}

/// Applies, per month: the real minimum-size screen on prior-month capitalization,
/// then removal of the smallest `small_pct` of survivors (ties broken by ascending
/// stock id), then missing-return substitution (delisting return, else the
/// exchange-specific constant).
pub fn apply_filters(
    candidates: &[CandidateObs],
    config: &FilterConfig,
) -> Result<(RawPanel, FilterLog), PanelError> {
    config.validate()?;
    let mut by_month: BTreeMap<Month, Vec<&CandidateObs>> = BTreeMap::new();
    for c in candidates {
        by_month.entry(c.month).or_default().push(c);
    }

    let mut panel = RawPanel::default();
    let mut log = FilterLog::default();
    for (month, rows) in by_month {
        let threshold = config.nominal_threshold(month.offset(-1))?;
        let mut survivors: Vec<&CandidateObs> =
            rows.iter().copied().filter(|c| c.mktcap_prev >= threshold).collect();
        let below_min_size = rows.len() - survivors.len();

        survivors.sort_by(|a, b| {
            a.mktcap_prev.total_cmp(&b.mktcap_prev).then(a.stock_id.cmp(&b.stock_id))
        });
        let drop = (config.small_pct(month) * survivors.len() as f64 + 1e-9).floor() as usize;
        let mut kept: Vec<&CandidateObs> = survivors.split_off(drop);
        kept.sort_by_key(|c| c.stock_id);

        let mut substituted = 0;
        let obs: Vec<RawObs> = kept
            .iter()
            .map(|c| {
                let ret = c.ret.unwrap_or_else(|| {
                    substituted += 1;
                    c.delist_ret.unwrap_or_else(|| config.substitute_return(c.exchange))
                });
                RawObs {
                    stock_id: c.stock_id,
                    ret,
                    mktcap_prev: c.mktcap_prev,
                    is_financial: c.is_financial,
                    chars: c.chars,
                }
            })
            .collect();

        log.months.push(MonthFilterCounts {
            month,
            candidates: rows.len(),
            below_min_size,
            smallest_pct: drop,
            substituted_returns: substituted,
            kept: obs.len(),
        });
        if !obs.is_empty() {
            panel.sections.push(RawSection { month, rows: obs });
        }
    }
    Ok((panel, log))
}
