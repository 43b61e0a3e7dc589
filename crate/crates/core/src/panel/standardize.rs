use serde::{Deserialize, Serialize};

use super::{
    Characteristic, CharacteristicSpec, CrossSection, Panel, PanelError, RawObs, RawPanel, VTreatment,
};
use crate::month::Month;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelOptions {
    /// Months before the first out-of-sample month.
    pub in_sample_months: usize,
    /// Drop stock-months without a book-to-market value even when V is not in the spec.
    pub strict_paper_inclusion: bool,
}

impl Default for PanelOptions {
    fn default() -> Self {
        Self { in_sample_months: 180, strict_paper_inclusion: true }
    }
}

/// Mean and sample (n-1) standard deviation.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0, n);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt(), n)
}

/// Standardizes one month. `rows` must all carry the spec's characteristics.
///
/// Each included column is demeaned and scaled to unit sample standard
/// deviation. Under [`VTreatment::ExemptFinancials`] the V moments come from
/// non-financial rows only and financial rows are set to exactly zero.
/// Value weights are prior-month capitalizations normalized to sum to one.
pub fn standardize_section(
    month: Month,
    rows: &[&RawObs],
    spec: &CharacteristicSpec,
) -> Result<CrossSection, PanelError> {
    let n = rows.len();
    let k = spec.k();
    let mut x = vec![0.0; n * k];
    for (j, &c) in spec.characteristics().iter().enumerate() {
        let exempt = c == Characteristic::BookToMarket
            && spec.v_treatment() == VTreatment::ExemptFinancials;
        let raw = |r: &RawObs| r.chars[c.index()].expect("row lacks a spec characteristic");
        let included = |r: &&&RawObs| !(exempt && r.is_financial);
        let (mean, sd, _) = moments(rows.iter().filter(included).map(|r| raw(r)));
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(PanelError::ZeroVariance { month, characteristic: c });
        }
        for (i, r) in rows.iter().enumerate() {
            x[i * k + j] = if exempt && r.is_financial { 0.0 } else { (raw(r) - mean) / sd };
        }
    }
    if k > 0 && n < k + 2 {
        return Err(PanelError::InsufficientStocks { month, n, required: k + 2 });
    }
    if n == 0 {
        return Err(PanelError::InsufficientStocks { month, n, required: 1 });
    }

    let total_cap: f64 = rows.iter().map(|r| r.mktcap_prev).sum();
    if !(total_cap > 0.0) {
        return Err(PanelError::ZeroMarketCap(month));
    }
    let w_bar = rows.iter().map(|r| r.mktcap_prev / total_cap).collect();
    let ids = rows.iter().map(|r| r.stock_id).collect();
    let returns = rows.iter().map(|r| r.ret).collect();
    Ok(CrossSection::new(month, ids, returns, x, k, w_bar))
}

/// Selects usable rows for `spec` in every month and standardizes them.
pub fn standardize(
    raw: &RawPanel,
    spec: &CharacteristicSpec,
    options: &PanelOptions,
) -> Result<Panel, PanelError> {
    let sections = raw
        .sections
        .iter()
        .map(|s| {
            let rows: Vec<&RawObs> = s
                .rows
                .iter()
                .filter(|r| r.usable_for(spec, options.strict_paper_inclusion))
                .collect();
            standardize_section(s.month, &rows, spec)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if options.in_sample_months > sections.len() {
        return Err(PanelError::TooShort {
            sections: sections.len(),
            required: options.in_sample_months,
        });
    }
    Ok(Panel { sections, first_oos: options.in_sample_months, spec: spec.clone() })
}
