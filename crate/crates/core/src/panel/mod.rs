//! Monthly cross-sections of returns, characteristics and market weights.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`load_raw`] reads stock-month histories.
//! 2. [`build_characteristics`] turns trailing histories into raw characteristic
//!    vectors for every eligible stock-month.
//! 3. [`apply_filters`] drops small stocks and fills missing returns, giving a
//!    [`RawPanel`] (the "filtered raw panel", still in raw characteristic units).
//! 4. [`standardize`] selects a characteristic set and produces a [`Panel`] of
//!    zero-mean, unit-variance cross-sections with value weights.
//!
//! The bootstrap resamples a [`RawPanel`] and re-runs stage 4 on every draw.

mod characteristics;
mod filters;
mod io;
mod standardize;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::month::Month;

pub use characteristics::{build_characteristics, market_model, value_weighted_index, CandidateObs};
pub use filters::{apply_filters, Deflator, FilterConfig, FilterLog, MonthFilterCounts};
pub use io::{
    load_raw, read_deflator, read_market_index, read_panel_csv, read_risk_free, write_panel_csv, write_raw_history,
    RawSchema, PANEL_HEADER, RAW_HISTORY_HEADER,
};
pub use standardize::{standardize, standardize_section, PanelOptions};

/// Errors raised while building or standardizing panels.
#[derive(Debug, thiserror::Error)]
pub enum PanelError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("duplicate stock-month (stock_id={stock_id}, month={month})")]
    DuplicateKey { stock_id: StockId, month: Month },

    #[error("deflator has no value for month {0}")]
    DeflatorGap(Month),

    #[error("market index has no value for month {0}")]
    IndexGap(Month),

    #[error("zero cross-sectional variance in {characteristic} at month {month}")]
    ZeroVariance { month: Month, characteristic: Characteristic },

    #[error("month {month} has {n} usable stocks, need at least {required}")]
    InsufficientStocks { month: Month, n: usize, required: usize },

    #[error("month {0} has zero total market capitalization")]
    ZeroMarketCap(Month),

    #[error("panel has {sections} months but {required} are required")]
    TooShort { sections: usize, required: usize },

    #[error("invalid characteristic spec: {0}")]
    InvalidSpec(String),

    #[error("invalid filter configuration: {0}")]
    InvalidFilter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Opaque stock identifier. Integer-valued so tie-breaking by id is unambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StockId(pub u64);

impl fmt::Display for StockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Exchange {
    Nyse,
    Amex,
    Nasdaq,
    Other,
}

impl Exchange {
    pub fn as_str(self) -> &'static str {
        match self {
            Exchange::Nyse => "NYSE",
            Exchange::Amex => "AMEX",
            Exchange::Nasdaq => "NASDAQ",
            Exchange::Other => "OTHER",
        }
    }

    /// Accepts names (case-insensitive) or CRSP exchange codes 1/2/3.
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_uppercase().as_str() {
            "NYSE" | "1" => Exchange::Nyse,
            "AMEX" | "2" => Exchange::Amex,
            "NASDAQ" | "3" => Exchange::Nasdaq,
            _ => Exchange::Other,
        }
    }
}

/// One row of raw stock history.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStockMonth {
    pub stock_id: StockId,
    pub month: Month,
    /// Simple monthly return; `None` when missing.
    pub ret: Option<f64>,
    /// Market capitalization at month end.
    pub market_cap: f64,
    /// Book value reported for a fiscal year ending in this month.
    pub book_value: Option<f64>,
    pub is_financial: bool,
    pub exchange: Exchange,
    pub delisted: bool,
    pub delist_ret: Option<f64>,
}

/// The seven characteristics, declared in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Characteristic {
    /// Momentum: compounded return over t-13..t-2.
    #[serde(rename = "M")]
    Momentum,
    /// Book-to-market: ln(1 + book / market equity).
    #[serde(rename = "V")]
    BookToMarket,
    /// Log size: ln(market cap at t-2).
    #[serde(rename = "S")]
    LogSize,
    #[serde(rename = "beta")]
    Beta,
    /// Last year's same-month return.
    #[serde(rename = "r_lag12")]
    LagTwelve,
    /// Average same-month return over the preceding five years.
    #[serde(rename = "r_bar")]
    SameMonthMean,
    /// Market-model residual standard deviation.
    #[serde(rename = "sigma_eps")]
    ResidualVol,
}

impl Characteristic {
    pub const ALL: [Characteristic; 7] = [
        Characteristic::Momentum,
        Characteristic::BookToMarket,
        Characteristic::LogSize,
        Characteristic::Beta,
        Characteristic::LagTwelve,
        Characteristic::SameMonthMean,
        Characteristic::ResidualVol,
    ];

    /// Position in the canonical order and in raw characteristic arrays.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Characteristic::Momentum => "M",
            Characteristic::BookToMarket => "V",
            Characteristic::LogSize => "S",
            Characteristic::Beta => "beta",
            Characteristic::LagTwelve => "r_lag12",
            Characteristic::SameMonthMean => "r_bar",
            Characteristic::ResidualVol => "sigma_eps",
        }
    }
}

impl fmt::Display for Characteristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Characteristic {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Characteristic::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PanelError::InvalidSpec(format!("unknown characteristic `{s}`")))
    }
}

/// Raw characteristic values in canonical order; `None` when unavailable.
pub type RawCharacteristics = [Option<f64>; 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VTreatment {
    /// Book-to-market standardized over all stocks.
    #[default]
    All,
    /// Book-to-market standardized over non-financials; financials get zero.
    ExemptFinancials,
}

/// A set of characteristics plus the book-to-market treatment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct CharacteristicSpec {
    included: Vec<Characteristic>,
    v_treatment: VTreatment,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    characteristics: Vec<Characteristic>,
    #[serde(default)]
    v_treatment: VTreatment,
}

impl TryFrom<SpecRepr> for CharacteristicSpec {
    type Error = PanelError;
    fn try_from(r: SpecRepr) -> Result<Self, Self::Error> {
        CharacteristicSpec::new(r.characteristics, r.v_treatment)
    }
}

impl From<CharacteristicSpec> for SpecRepr {
    fn from(s: CharacteristicSpec) -> Self {
        SpecRepr { characteristics: s.included, v_treatment: s.v_treatment }
    }
}

impl CharacteristicSpec {
    /// Sorts into canonical order and checks that `r_lag12` only appears with `r_bar`.
    pub fn new(
        characteristics: impl IntoIterator<Item = Characteristic>,
        v_treatment: VTreatment,
    ) -> Result<Self, PanelError> {
        let mut included: Vec<Characteristic> = characteristics.into_iter().collect();
        included.sort();
        included.dedup();
        if included.contains(&Characteristic::LagTwelve)
            && !included.contains(&Characteristic::SameMonthMean)
        {
            return Err(PanelError::InvalidSpec(
                "r_lag12 may only be used together with r_bar".into(),
            ));
        }
        Ok(Self { included, v_treatment })
    }

    /// The empty set; its policy is the value-weighted market.
    pub fn empty() -> Self {
        Self { included: Vec::new(), v_treatment: VTreatment::All }
    }

    pub fn characteristics(&self) -> &[Characteristic] {
        &self.included
    }

    pub fn k(&self) -> usize {
        self.included.len()
    }

    pub fn v_treatment(&self) -> VTreatment {
        self.v_treatment
    }

    pub fn contains(&self, c: Characteristic) -> bool {
        self.included.contains(&c)
    }

    /// Compact label such as `M,V-f,S`.
    pub fn label(&self) -> String {
        if self.included.is_empty() {
            return "none".into();
        }
        self.included
            .iter()
            .map(|c| match (c, self.v_treatment) {
                (Characteristic::BookToMarket, VTreatment::ExemptFinancials) => "V-f",
                _ => c.name(),
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// One stock in one month of the filtered raw panel.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObs {
    pub stock_id: StockId,
    /// Return realized over the section's month.
    pub ret: f64,
    /// Market capitalization at the end of the previous month.
    pub mktcap_prev: f64,
    pub is_financial: bool,
    pub chars: RawCharacteristics,
}

impl RawObs {
    /// True when every characteristic in `spec` is present (and V, when `require_v`).
    pub fn usable_for(&self, spec: &CharacteristicSpec, require_v: bool) -> bool {
        let v_ok = !require_v || self.chars[Characteristic::BookToMarket.index()].is_some();
        v_ok && spec.characteristics().iter().all(|c| self.chars[c.index()].is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSection {
    pub month: Month,
    pub rows: Vec<RawObs>,
}

/// Filtered but unstandardized panel: what the bootstrap resamples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawPanel {
    pub sections: Vec<RawSection>,
}

impl RawPanel {
    pub fn months(&self) -> impl Iterator<Item = Month> + '_ {
        self.sections.iter().map(|s| s.month)
    }

    pub fn row_count(&self) -> usize {
        self.sections.iter().map(|s| s.rows.len()).sum()
    }
}

/// A standardized monthly cross-section.
///
/// Caches the value-weighted return and the characteristic-tilt return
/// `(1/N) X'r`, which are all the objective needs: the policy return is
/// `market_return + theta . tilt_return`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    month: Month,
    ids: Vec<StockId>,
    returns: Vec<f64>,
    x: Vec<f64>,
    k: usize,
    w_bar: Vec<f64>,
    market_return: f64,
    tilt_return: Vec<f64>,
}

impl CrossSection {
    /// `x` is row-major with `k` columns. Panics if lengths disagree.
    pub fn new(
        month: Month,
        ids: Vec<StockId>,
        returns: Vec<f64>,
        x: Vec<f64>,
        k: usize,
        w_bar: Vec<f64>,
    ) -> Self {
        let n = returns.len();
        assert_eq!(ids.len(), n, "ids length");
        assert_eq!(w_bar.len(), n, "w_bar length");
        assert_eq!(x.len(), n * k, "characteristic matrix shape");
        let market_return = w_bar.iter().zip(&returns).map(|(w, r)| w * r).sum();
        let mut tilt_return = vec![0.0; k];
        if k > 0 {
            for (row, r) in x.chunks_exact(k).zip(&returns) {
                for (acc, xv) in tilt_return.iter_mut().zip(row) {
                    *acc += xv * r;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        tilt_return.iter_mut().for_each(|v| *v *= inv_n);
        Self { month, ids, returns, x, k, w_bar, market_return, tilt_return }
    }

    pub fn month(&self) -> Month {
        self.month
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ids(&self) -> &[StockId] {
        &self.ids
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn w_bar(&self) -> &[f64] {
        &self.w_bar
    }

    /// Row-major `N x K` standardized characteristics.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| self.x[i * self.k + j])
    }

    /// Value-weighted return `sum w_bar_i r_i`.
    pub fn market_return(&self) -> f64 {
        self.market_return
    }

    /// `(1/N) X'r`.
    pub fn tilt_return(&self) -> &[f64] {
        &self.tilt_return
    }

    /// Equal-weighted return.
    pub fn equal_weight_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.len() as f64
    }
}

/// A standardized panel plus its in-sample/out-of-sample split.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub sections: Vec<CrossSection>,
    /// Index of the first out-of-sample month.
    pub first_oos: usize,
    pub spec: CharacteristicSpec,
}

impl Panel {
    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn months(&self) -> Vec<Month> {
        self.sections.iter().map(|s| s.month()).collect()
    }
}
