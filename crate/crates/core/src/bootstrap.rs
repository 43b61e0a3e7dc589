//! Cross-sectional bootstrap of the filtered panel and the resampled
//! out-of-sample experiment built on it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluate::{
    certainty_equivalent, leverage, robust_moments, sharpe_annualized, RobustMoments, SamplingDistribution,
};
use crate::factors::{decompose, Decomposition, FactorPanel};
use crate::month::Month;
use crate::panel::{
    standardize, standardize_section, CharacteristicSpec, Panel, PanelError, PanelOptions, RawObs, RawPanel,
};
use crate::parallel::{map_indexed, Execution};
use crate::policy::{
    equal_weighted_path, run_protocol, value_weighted_path, PolicyTheta, PortfolioPath, RuleSpec, Tolerances,
};

/// Redraws allowed for a month whose resample has a constant characteristic.
pub const MAX_REDRAWS: u32 = 100;

/// Identifier of the value-weighted benchmark in experiment results.
pub const VW_ID: &str = "VW";
/// Identifier of the equal-weighted benchmark in experiment results.
pub const EW_ID: &str = "EW";

#[derive(Debug, thiserror::Error)]
pub enum BootstrapError {
    #[error("month {month}: every resample was degenerate after {redraws} redraws: {source}")]
    Degenerate {
        month: Month,
        redraws: u32,
        #[source]
        source: PanelError,
    },

    #[error(transparent)]
    Panel(#[from] PanelError),

    #[error("replicate count must be at least 1")]
    NoReplicates,

    #[error("at least one investor risk aversion is required")]
    NoGammas,

    #[error("investor risk aversion must exceed 1, got {0}")]
    InvalidGamma(f64),

    #[error("rule id `{0}` is used twice or collides with a benchmark id")]
    DuplicateRule(String),

    #[error("rule `{id}`: {message}")]
    InvalidRule { id: String, message: String },

    #[error("no {what} for out-of-sample month {month}")]
    MissingSeries { what: &'static str, month: Month },

    #[error("panel has {0} months; at most 65536 are supported")]
    TooManyMonths(usize),
}

/// Key of one pseudosample. The month-`t` draw depends only on
/// `(base_seed, replicate, t)` and the redraw counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PseudosampleSeed {
    pub base_seed: u64,
    pub replicate: u64,
}

impl PseudosampleSeed {
    pub fn new(base_seed: u64, replicate: u64) -> Self {
        Self { base_seed, replicate }
    }

    /// Independent ChaCha stream for one (month, redraw) pair.
    pub fn month_rng(&self, month_index: usize, redraw: u32) -> ChaCha8Rng {
        assert!(month_index < 1 << 16 && redraw < 1 << 8 && self.replicate < 1 << 40);
        let mut rng = ChaCha8Rng::seed_from_u64(self.base_seed);
        rng.set_stream((self.replicate << 24) | (u64::from(redraw) << 16) | month_index as u64);
        rng
    }
}

fn usable_rows<'a>(rows: &'a [RawObs], spec: &CharacteristicSpec, options: &PanelOptions) -> Vec<&'a RawObs> {
    let mut usable: Vec<&RawObs> =
        rows.iter().filter(|r| r.usable_for(spec, options.strict_paper_inclusion)).collect();
    // canonical order makes the draw invariant to the input row order
    usable.sort_by_key(|r| r.stock_id);
    usable
}

/// Draws one pseudosample and standardizes it for `spec`.
///
/// Month `t` receives exactly as many rows as the original month has usable
/// rows, drawn with replacement from that month only. A draw with a constant
/// characteristic is redrawn up to [`MAX_REDRAWS`] times.
pub fn draw_pseudosample(
    raw: &RawPanel,
    spec: &CharacteristicSpec,
    options: &PanelOptions,
    seed: PseudosampleSeed,
) -> Result<Panel, BootstrapError> {
    if raw.sections.len() > 1 << 16 {
        return Err(BootstrapError::TooManyMonths(raw.sections.len()));
    }
    if options.in_sample_months > raw.sections.len() {
        return Err(PanelError::TooShort { sections: raw.sections.len(), required: options.in_sample_months }.into());
    }
    let mut sections = Vec::with_capacity(raw.sections.len());
    for (t, section) in raw.sections.iter().enumerate() {
        let usable = usable_rows(&section.rows, spec, options);
        let n = usable.len();
        if n == 0 {
            return Err(PanelError::InsufficientStocks { month: section.month, n: 0, required: 1 }.into());
        }
        let mut redraw = 0;
        let cs = loop {
            let mut rng = seed.month_rng(t, redraw);
            let rows: Vec<&RawObs> = (0..n).map(|_| usable[rng.random_range(0..n)]).collect();
            match standardize_section(section.month, &rows, spec) {
                Ok(cs) => break cs,
                Err(e @ PanelError::ZeroVariance { .. }) => {
                    if redraw == MAX_REDRAWS {
                        return Err(BootstrapError::Degenerate { month: section.month, redraws: redraw, source: e });
                    }
                    redraw += 1;
                }
                Err(e) => return Err(e.into()),
            }
        };
        sections.push(cs);
    }
    Ok(Panel { sections, first_oos: options.in_sample_months, spec: spec.clone() })
}

/// Risk-free rate used for Sharpe ratios and factor regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RiskFree {
    Constant(f64),
    Series(BTreeMap<Month, f64>),
}

impl Default for RiskFree {
    /// 37 bp per month.
    fn default() -> Self {
        RiskFree::Constant(0.0037)
    }
}

impl RiskFree {
    pub fn for_months(&self, months: &[Month]) -> Result<Vec<f64>, BootstrapError> {
        match self {
            RiskFree::Constant(r) => Ok(vec![*r; months.len()]),
            RiskFree::Series(map) => months
                .iter()
                .map(|m| map.get(m).copied().ok_or(BootstrapError::MissingSeries { what: "risk-free rate", month: *m }))
                .collect(),
        }
    }
}

/// Everything `run_experiment` needs besides the raw panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub rules: Vec<RuleSpec>,
    /// Investor risk aversions used for certainty equivalents.
    pub gammas: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
    pub panel: PanelOptions,
    pub tolerances: Tolerances,
    pub risk_free: RiskFree,
    pub factors: Option<FactorPanel>,
    /// Keep each path's returns (for pooled densities).
    pub keep_returns: bool,
    pub execution: Execution,
}

impl ExperimentSpec {
    pub fn new(rules: Vec<RuleSpec>, gammas: Vec<f64>, replicates: usize, base_seed: u64) -> Self {
        Self {
            rules,
            gammas,
            replicates,
            base_seed,
            panel: PanelOptions::default(),
            tolerances: Tolerances::default(),
            risk_free: RiskFree::default(),
            factors: None,
            keep_returns: false,
            execution: Execution::default(),
        }
    }
}

/// Metrics of one rule (or benchmark) on one (pseudo)sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleMetrics {
    /// Certainty equivalent in bp per month, one per investor gamma.
    pub ce_bp: Vec<f64>,
    /// `None` when the path is too short or has no dispersion.
    pub moments: Option<RobustMoments>,
    pub sharpe: Option<f64>,
    /// Mean negative-weight sum, percent.
    pub leverage: f64,
    pub decomposition: Option<Decomposition>,
    /// Annual coefficients (empty for benchmarks).
    pub thetas: Vec<PolicyTheta>,
    pub returns: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub index: usize,
    /// One outcome per experiment entry; errors carry their message.
    pub outcomes: Vec<Result<RuleMetrics, String>>,
}

/// A benchmark (`rule = None`) or a rule in the result table.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub id: String,
    pub rule: Option<RuleSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub replicate: usize,
    pub entry_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// The two benchmarks first, then the rules in input order.
    pub entries: Vec<Entry>,
    pub gammas: Vec<f64>,
    pub replicates: Vec<ReplicateResult>,
}

impl ExperimentResult {
    pub fn entry_index(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    /// Distribution of a derived metric; failed replicates are counted,
    /// replicates where the metric is undefined are skipped.
    pub fn distribution<F>(&self, entry: usize, metric: F) -> SamplingDistribution
    where
        F: Fn(&RuleMetrics) -> Option<f64>,
    {
        let mut values = Vec::with_capacity(self.replicates.len());
        let mut failed = 0;
        for rep in &self.replicates {
            match &rep.outcomes[entry] {
                Ok(m) => values.extend(metric(m)),
                Err(_) => failed += 1,
            }
        }
        SamplingDistribution::new(values, failed)
    }

    pub fn ce(&self, entry: usize, gamma_index: usize) -> SamplingDistribution {
        self.distribution(entry, |m| Some(m.ce_bp[gamma_index]))
    }

    /// Failed (replicate, entry) pairs in replicate order.
    pub fn failures(&self) -> Vec<Failure> {
        self.replicates
            .iter()
            .flat_map(|rep| {
                rep.outcomes.iter().zip(&self.entries).filter_map(move |(o, e)| {
                    o.as_ref().err().map(|msg| Failure {
                        replicate: rep.index,
                        entry_id: e.id.clone(),
                        message: msg.clone(),
                    })
                })
            })
            .collect()
    }
}

fn validate(raw: &RawPanel, exp: &ExperimentSpec) -> Result<Vec<Month>, BootstrapError> {
    if exp.replicates == 0 {
        return Err(BootstrapError::NoReplicates);
    }
    if exp.gammas.is_empty() {
        return Err(BootstrapError::NoGammas);
    }
    if let Some(&g) = exp.gammas.iter().find(|g| !(**g > 1.0) || !g.is_finite()) {
        return Err(BootstrapError::InvalidGamma(g));
    }
    let mut seen = vec![VW_ID, EW_ID];
    for rule in &exp.rules {
        if seen.contains(&rule.id.as_str()) {
            return Err(BootstrapError::DuplicateRule(rule.id.clone()));
        }
        seen.push(&rule.id);
        rule.validate()
            .map_err(|e| BootstrapError::InvalidRule { id: rule.id.clone(), message: e.to_string() })?;
    }
    if raw.sections.len() > 1 << 16 {
        return Err(BootstrapError::TooManyMonths(raw.sections.len()));
    }
    let first = exp.panel.in_sample_months;
    if first > raw.sections.len() {
        return Err(PanelError::TooShort { sections: raw.sections.len(), required: first }.into());
    }
    let years = (raw.sections.len() - first) / 12;
    let oos: Vec<Month> = raw.sections[first..first + 12 * years].iter().map(|s| s.month).collect();
    exp.risk_free.for_months(&oos)?;
    if let Some(f) = &exp.factors {
        let have: std::collections::BTreeSet<Month> = f.months.iter().copied().collect();
        if let Some(m) = oos.iter().find(|m| !have.contains(m)) {
            return Err(BootstrapError::MissingSeries { what: "factor returns", month: *m });
        }
    }
    Ok(oos)
}

fn path_metrics(
    path: &PortfolioPath,
    thetas: Vec<PolicyTheta>,
    exp: &ExperimentSpec,
) -> Result<RuleMetrics, String> {
    let ce_bp = exp
        .gammas
        .iter()
        .map(|&g| certainty_equivalent(&path.returns, g))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let sharpe = exp
        .risk_free
        .for_months(&path.months)
        .ok()
        .and_then(|rf| sharpe_annualized(&path.returns, &rf).ok());
    // regressions use the factor file's own rf column
    let decomposition = exp.factors.as_ref().and_then(|f| decompose(path, f).ok());
    Ok(RuleMetrics {
        ce_bp,
        moments: robust_moments(&path.returns).ok(),
        sharpe,
        leverage: leverage(path),
        decomposition,
        thetas,
        returns: exp.keep_returns.then(|| path.returns.clone()),
    })
}

/// Distinct characteristic specs, the empty one (benchmarks) first.
fn spec_groups(rules: &[RuleSpec]) -> Vec<CharacteristicSpec> {
    let mut specs = vec![CharacteristicSpec::empty()];
    for r in rules {
        if !specs.contains(&r.spec) {
            specs.push(r.spec.clone());
        }
    }
    specs
}

fn evaluate_sample<D>(exp: &ExperimentSpec, specs: &[CharacteristicSpec], mut draw: D) -> Vec<Result<RuleMetrics, String>>
where
    D: FnMut(&CharacteristicSpec) -> Result<Panel, String>,
{
    let panels: Vec<Result<Panel, String>> = specs.iter().map(&mut draw).collect();
    let panel_for = |spec: &CharacteristicSpec| {
        let i = specs.iter().position(|s| s == spec).expect("spec registered");
        panels[i].as_ref().map_err(Clone::clone)
    };

    let mut out = Vec::with_capacity(exp.rules.len() + 2);
    let bench = panel_for(&CharacteristicSpec::empty());
    out.push(bench.clone().and_then(|p| path_metrics(&value_weighted_path(p), Vec::new(), exp)));
    out.push(bench.and_then(|p| path_metrics(&equal_weighted_path(p), Vec::new(), exp)));
    for rule in &exp.rules {
        out.push(panel_for(&rule.spec).and_then(|p| {
            let run = run_protocol(p, rule, &exp.tolerances).map_err(|e| e.to_string())?;
            path_metrics(&run.path, run.thetas, exp)
        }));
    }
    out
}

fn entries(exp: &ExperimentSpec) -> Vec<Entry> {
    let mut e = vec![Entry { id: VW_ID.into(), rule: None }, Entry { id: EW_ID.into(), rule: None }];
    e.extend(exp.rules.iter().map(|r| Entry { id: r.id.clone(), rule: Some(r.clone()) }));
    e
}

/// Resampled experiment: every replicate draws a pseudosample per
/// characteristic set, runs every rule's protocol on it, and evaluates the
/// rules and both benchmarks. Failures are recorded per (replicate, entry).
pub fn run_experiment(raw: &RawPanel, exp: &ExperimentSpec) -> Result<ExperimentResult, BootstrapError> {
    validate(raw, exp)?;
    let specs = spec_groups(&exp.rules);
    let replicates = map_indexed(exp.replicates, exp.execution, |b| {
        let seed = PseudosampleSeed::new(exp.base_seed, b as u64);
        let outcomes = evaluate_sample(exp, &specs, |spec| {
            draw_pseudosample(raw, spec, &exp.panel, seed).map_err(|e| e.to_string())
        });
        ReplicateResult { index: b, outcomes }
    });
    Ok(ExperimentResult { entries: entries(exp), gammas: exp.gammas.clone(), replicates })
}

/// The same evaluation on the original (not resampled) panel.
pub fn evaluate_original(raw: &RawPanel, exp: &ExperimentSpec) -> Result<ExperimentResult, BootstrapError> {
    validate(raw, exp)?;
    let specs = spec_groups(&exp.rules);
    let outcomes =
        evaluate_sample(exp, &specs, |spec| standardize(raw, spec, &exp.panel).map_err(|e| e.to_string()));
    Ok(ExperimentResult {
        entries: entries(exp),
        gammas: exp.gammas.clone(),
        replicates: vec![ReplicateResult { index: 0, outcomes }],
    })
}
