//! Result bundles: fixed-precision CSV tables written after the experiment
//! merge, and readers used by the `report` command.
//!
//! Precision: certainty equivalents 4 decimals (bp/month); every other
//! statistic 6 decimals. Units are in the metric names.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use crate::bootstrap::{ExperimentResult, RuleMetrics};
use crate::evaluate::{export_density, rank_rules, summarize, write_density_csv, MetricSummary, Ranking};
use crate::factors::{cross_label, FACTOR_NAMES};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const THETAS_FILE: &str = "thetas.csv";
pub const THETA_CORR_FILE: &str = "theta_correlations.csv";
pub const DECOMPOSITION_FILE: &str = "decomposition.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const THETA_PATH_DIR: &str = "theta_paths";
pub const RETURNS_DIR: &str = "returns";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("unknown rule id `{0}`")]
    UnknownRule(String),

    #[error("{0} not found; rerun with keep_returns = true")]
    MissingReturns(PathBuf),

    #[error(transparent)]
    Eval(#[from] crate::evaluate::EvalError),
}

fn fixed(v: f64, decimals: usize) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.decimals$}")
    }
}

fn opt_fixed(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| fixed(x, decimals)).unwrap_or_default()
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl Table {
    fn create(path: PathBuf, header: &[&str]) -> Result<Self, ReportError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| ReportError::Io { path: parent.to_path_buf(), source })?;
        }
        let file = File::create(&path).map_err(|source| ReportError::Io { path: path.clone(), source })?;
        let mut t = Table { writer: csv::Writer::from_writer(BufWriter::new(file)), path };
        t.row(header.iter().map(|s| s.to_string()))?;
        Ok(t)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<(), ReportError> {
        self.writer
            .write_record(fields.into_iter().collect::<Vec<_>>())
            .map_err(|source| ReportError::Csv { path: self.path.clone(), source })
    }

    fn finish(mut self) -> Result<PathBuf, ReportError> {
        self.writer.flush().map_err(|source| ReportError::Io { path: self.path.clone(), source })?;
        Ok(self.path)
    }
}

/// Scalar path metrics in reporting units, in output order.
pub const PATH_METRICS: [&str; 9] =
    ["mean_bp", "sd_pct", "median_bp", "iqr_pct", "min_pct", "s4", "k3", "sharpe_ann", "neg_wts_pct"];

fn path_metric(m: &RuleMetrics, name: &str) -> Option<f64> {
    let mo = m.moments.as_ref();
    match name {
        "mean_bp" => mo.map(|x| x.mean * 1e4),
        "sd_pct" => mo.map(|x| x.sd * 100.0),
        "median_bp" => mo.map(|x| x.median * 1e4),
        "iqr_pct" => mo.map(|x| x.iqr * 100.0),
        "min_pct" => mo.map(|x| x.min * 100.0),
        "s4" => mo.map(|x| x.s4),
        "k3" => mo.map(|x| x.k3),
        "sharpe_ann" => m.sharpe,
        "neg_wts_pct" => Some(m.leverage),
        _ => None,
    }
}

fn summary_fields(s: Option<MetricSummary>, decimals: usize) -> [String; 3] {
    match s {
        Some(s) => [fixed(s.p2_5, decimals), fixed(s.mean, decimals), fixed(s.p97_5, decimals)],
        None => ["NaN".into(), "NaN".into(), "NaN".into()],
    }
}

/// Time average of the annual coefficient vectors.
fn average_theta(m: &RuleMetrics) -> Option<Vec<f64>> {
    let first = m.thetas.first()?;
    let mut avg = vec![0.0; first.theta.len()];
    for t in &m.thetas {
        avg.iter_mut().zip(&t.theta).for_each(|(a, v)| *a += v);
    }
    let n = m.thetas.len() as f64;
    avg.iter_mut().for_each(|a| *a /= n);
    Some(avg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleOptions {
    pub dump_replicates: bool,
    pub keep_returns: bool,
}

/// Writes every table of a run into `dir`; returns the paths written.
///
/// `original` holds the same evaluation on the unresampled panel (a single
/// replicate) and supplies the `ce_original` column and the coefficient paths.
pub fn write_bundle(
    dir: &Path,
    result: &ExperimentResult,
    original: &ExperimentResult,
    options: BundleOptions,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();

    let mut t = Table::create(
        dir.join(SUMMARY_FILE),
        &[
            "rule_id", "characteristics", "gamma", "gamma_star", "protocol", "ce_p2_5", "ce_mean", "ce_p97_5",
            "ce_original", "replicates", "failed",
        ],
    )?;
    for (e, entry) in result.entries.iter().enumerate() {
        let (chars, gamma_star, protocol) = match &entry.rule {
            Some(r) => (r.spec.label(), fixed(r.gamma_star, 2), r.protocol.as_str().to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        for (g, gamma) in result.gammas.iter().enumerate() {
            let dist = result.ce(e, g);
            let orig = original.replicates[0].outcomes[e].as_ref().ok().map(|m| m.ce_bp[g]);
            let [lo, mean, hi] = summary_fields(summarize(&dist).ok(), 4);
            t.row([
                entry.id.clone(),
                chars.clone(),
                fixed(*gamma, 2),
                gamma_star.clone(),
                protocol.clone(),
                lo,
                mean,
                hi,
                opt_fixed(orig, 4),
                dist.values.len().to_string(),
                dist.failed.to_string(),
            ])?;
        }
    }
    written.push(t.finish()?);

    let mut t = Table::create(dir.join(METRICS_FILE), &["rule_id", "metric", "p2_5", "mean", "p97_5", "original"])?;
    for (e, entry) in result.entries.iter().enumerate() {
        for name in PATH_METRICS {
            let dist = result.distribution(e, |m| path_metric(m, name));
            let orig = original.replicates[0].outcomes[e].as_ref().ok().and_then(|m| path_metric(m, name));
            let [lo, mean, hi] = summary_fields(summarize(&dist).ok(), 6);
            t.row([entry.id.clone(), name.to_string(), lo, mean, hi, opt_fixed(orig, 6)])?;
        }
    }
    written.push(t.finish()?);

    let mut t = Table::create(dir.join(THETAS_FILE), &["rule_id", "characteristic", "p2_5", "mean", "p97_5", "sd"])?;
    let mut c = Table::create(dir.join(THETA_CORR_FILE), &["rule_id", "characteristic_a", "characteristic_b", "correlation"])?;
    for (e, entry) in result.entries.iter().enumerate() {
        let Some(rule) = &entry.rule else { continue };
        let chars = rule.spec.characteristics();
        let avgs: Vec<Vec<f64>> =
            result.replicates.iter().filter_map(|r| r.outcomes[e].as_ref().ok().and_then(average_theta)).collect();
        let n = avgs.len() as f64;
        let means: Vec<f64> = (0..chars.len()).map(|j| avgs.iter().map(|a| a[j]).sum::<f64>() / n).collect();
        let cov = |a: usize, b: usize| {
            avgs.iter().map(|v| (v[a] - means[a]) * (v[b] - means[b])).sum::<f64>() / (n - 1.0)
        };
        for (j, ch) in chars.iter().enumerate() {
            let dist = crate::evaluate::SamplingDistribution::new(avgs.iter().map(|a| a[j]).collect(), 0);
            let [lo, mean, hi] = summary_fields(summarize(&dist).ok(), 6);
            let sd = if avgs.len() > 1 { fixed(cov(j, j).sqrt(), 6) } else { "NaN".into() };
            t.row([entry.id.clone(), ch.name().to_string(), lo, mean, hi, sd])?;
            for (k, other) in chars.iter().enumerate().skip(j + 1) {
                let r = if avgs.len() > 1 { cov(j, k) / (cov(j, j) * cov(k, k)).sqrt() } else { f64::NAN };
                c.row([entry.id.clone(), ch.name().to_string(), other.name().to_string(), fixed(r, 6)])?;
            }
        }
    }
    written.push(t.finish()?);
    written.push(c.finish()?);

    for (e, entry) in original.entries.iter().enumerate() {
        let (Some(rule), Ok(m)) = (&entry.rule, &original.replicates[0].outcomes[e]) else { continue };
        let mut t = Table::create(dir.join(THETA_PATH_DIR).join(format!("{}.csv", entry.id)), &["year", "characteristic", "theta"])?;
        for th in &m.thetas {
            for (ch, v) in rule.spec.characteristics().iter().zip(&th.theta) {
                t.row([th.year.to_string(), ch.name().to_string(), fixed(*v, 6)])?;
            }
        }
        written.push(t.finish()?);
    }

    let has_factors = result
        .replicates
        .iter()
        .any(|r| r.outcomes.iter().any(|o| o.as_ref().is_ok_and(|m| m.decomposition.is_some())));
    if has_factors {
        written.push(write_decomposition(dir, result)?);
    }

    let mut t = Table::create(dir.join(FAILURES_FILE), &["replicate", "rule_id", "message"])?;
    for f in result.failures() {
        t.row([f.replicate.to_string(), f.entry_id, f.message])?;
    }
    written.push(t.finish()?);

    if options.dump_replicates {
        let mut t = Table::create(dir.join(REPLICATES_FILE), &["replicate", "rule_id", "gamma", "metric", "value"])?;
        for rep in &result.replicates {
            for (entry, outcome) in result.entries.iter().zip(&rep.outcomes) {
                let Ok(m) = outcome else { continue };
                for (gamma, ce) in result.gammas.iter().zip(&m.ce_bp) {
                    t.row([rep.index.to_string(), entry.id.clone(), fixed(*gamma, 2), "ce_bp".into(), fixed(*ce, 4)])?;
                }
                for name in PATH_METRICS {
                    if let Some(v) = path_metric(m, name) {
                        t.row([rep.index.to_string(), entry.id.clone(), String::new(), name.into(), fixed(v, 6)])?;
                    }
                }
            }
        }
        written.push(t.finish()?);
    }

    if options.keep_returns {
        for (e, entry) in result.entries.iter().enumerate() {
            let mut t = Table::create(dir.join(RETURNS_DIR).join(format!("{}.csv", entry.id)), &["return"])?;
            for rep in &result.replicates {
                if let Ok(RuleMetrics { returns: Some(r), .. }) = &rep.outcomes[e] {
                    for v in r {
                        t.row([format!("{v}")])?;
                    }
                }
            }
            written.push(t.finish()?);
        }
    }
    Ok(written)
}

fn write_decomposition(dir: &Path, result: &ExperimentResult) -> Result<PathBuf, ReportError> {
    let mut t = Table::create(
        dir.join(DECOMPOSITION_FILE),
        &["rule_id", "component", "coef_p2_5", "coef_mean", "coef_p97_5", "share_p2_5", "share_mean", "share_p97_5"],
    )?;
    let blank = || [String::new(), String::new(), String::new()];
    for (e, entry) in result.entries.iter().enumerate() {
        let summary = |f: &dyn Fn(&crate::factors::Decomposition) -> f64| {
            let dist = result.distribution(e, |m| m.decomposition.as_ref().map(f));
            summary_fields(summarize(&dist).ok(), 6)
        };
        let mut emit = |component: String, coef: [String; 3], share: [String; 3]| {
            t.row([entry.id.clone(), component].into_iter().chain(coef).chain(share))
        };
        emit("alpha_bp".into(), summary(&|d| d.alpha_bp), blank())?;
        for (k, name) in FACTOR_NAMES.iter().enumerate() {
            emit(name.to_string(), summary(&|d| d.betas[k]), summary(&|d| d.shares.own[k]))?;
        }
        for p in 0..6 {
            emit(cross_label(p), blank(), summary(&|d| d.shares.cross[p]))?;
        }
        emit("Orthogonal".into(), blank(), summary(&|d| d.shares.orthogonal))?;
    }
    t.finish()
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub rule_id: String,
    pub gamma: f64,
    pub ce: MetricSummary,
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>, ReportError> {
    csv::Reader::from_path(path).map_err(|source| ReportError::Csv { path: path.to_path_buf(), source })
}

pub fn read_summary(dir: &Path) -> Result<Vec<SummaryRow>, ReportError> {
    let path = dir.join(SUMMARY_FILE);
    let mut reader = open_csv(&path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|source| ReportError::Csv { path: path.clone(), source })?;
        let num = |i: usize| {
            rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| ReportError::Malformed {
                path: path.clone(),
                message: format!("bad number in column {i}"),
            })
        };
        rows.push(SummaryRow {
            rule_id: rec.get(0).unwrap_or_default().to_string(),
            gamma: num(2)?,
            ce: MetricSummary { p2_5: num(5)?, mean: num(6)?, p97_5: num(7)? },
        });
    }
    Ok(rows)
}

/// Dominance ranking of every entry with a finite summary at `gamma`.
pub fn ranking_for_gamma(rows: &[SummaryRow], gamma: f64) -> Result<Ranking, ReportError> {
    let map: BTreeMap<String, MetricSummary> = rows
        .iter()
        .filter(|r| r.gamma == gamma && r.ce.p2_5.is_finite())
        .map(|r| (r.rule_id.clone(), r.ce))
        .collect();
    Ok(rank_rules(&map)?)
}

/// One row of `decomposition.csv` (mean columns only).
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionRow {
    pub rule_id: String,
    pub component: String,
    pub coef_mean: Option<f64>,
    pub share_mean: Option<f64>,
}

pub fn read_decomposition(dir: &Path) -> Result<Option<Vec<DecompositionRow>>, ReportError> {
    let path = dir.join(DECOMPOSITION_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let mut reader = open_csv(&path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|source| ReportError::Csv { path: path.clone(), source })?;
        let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok());
        rows.push(DecompositionRow {
            rule_id: rec.get(0).unwrap_or_default().to_string(),
            component: rec.get(1).unwrap_or_default().to_string(),
            coef_mean: num(3),
            share_mean: num(6),
        });
    }
    Ok(Some(rows))
}

/// Reads a rule's pooled returns and writes `density/<rule_id>.csv`.
pub fn export_rule_density(dir: &Path, rule_id: &str, bin_width: f64) -> Result<PathBuf, ReportError> {
    let rows = read_summary(dir)?;
    if !rows.iter().any(|r| r.rule_id == rule_id) {
        return Err(ReportError::UnknownRule(rule_id.to_string()));
    }
    let src = dir.join(RETURNS_DIR).join(format!("{rule_id}.csv"));
    if !src.exists() {
        return Err(ReportError::MissingReturns(src));
    }
    let mut reader = open_csv(&src)?;
    let mut pooled = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|source| ReportError::Csv { path: src.clone(), source })?;
        let v = rec.get(0).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| ReportError::Malformed {
            path: src.clone(),
            message: "bad return value".into(),
        })?;
        pooled.push(v);
    }
    let bins = export_density(&pooled, bin_width)?;
    let out_dir = dir.join("density");
    fs::create_dir_all(&out_dir).map_err(|source| ReportError::Io { path: out_dir.clone(), source })?;
    let out = out_dir.join(format!("{rule_id}.csv"));
    let file = File::create(&out).map_err(|source| ReportError::Io { path: out.clone(), source })?;
    write_density_csv(&bins, BufWriter::new(file)).map_err(|source| ReportError::Io { path: out.clone(), source })?;
    Ok(out)
}
