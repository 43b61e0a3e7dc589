use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{quantile_sorted, EvalError};

/// Bootstrap replicates of one scalar metric.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SamplingDistribution {
    /// Values from successful replicates, in replicate order.
    pub values: Vec<f64>,
    /// Replicates excluded because estimation failed.
    pub failed: usize,
}

impl SamplingDistribution {
    pub fn new(values: Vec<f64>, failed: usize) -> Self {
        Self { values, failed }
    }

    pub fn point_mass(value: f64, replicates: usize) -> Self {
        Self { values: vec![value; replicates], failed: 0 }
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn quantile(&self, p: f64) -> Option<f64> {
        (!self.values.is_empty()).then(|| quantile_sorted(&self.sorted(), p))
    }
}

/// The 95% band and mean of a sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub p2_5: f64,
    pub mean: f64,
    pub p97_5: f64,
}

/// 2.5th percentile, mean, and 97.5th percentile over successful replicates.
pub fn summarize(dist: &SamplingDistribution) -> Result<MetricSummary, EvalError> {
    if dist.values.is_empty() {
        return Err(EvalError::AllFailed(dist.failed));
    }
    let sorted = dist.sorted();
    Ok(MetricSummary {
        p2_5: quantile_sorted(&sorted, 0.025),
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p97_5: quantile_sorted(&sorted, 0.975),
    })
}

/// `A` dominates `B` when A's 2.5th percentile exceeds B's 97.5th percentile.
pub fn dominates(a: &MetricSummary, b: &MetricSummary) -> bool {
    a.p2_5 > b.p97_5
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Rules by descending 2.5th percentile; ties by ascending id.
    pub order: Vec<(String, MetricSummary)>,
    /// The top-ranked rule.
    pub winner: String,
    /// Rules other than the winner that the winner does not dominate.
    pub not_dominated: Vec<String>,
}

pub fn rank_rules(rules: &BTreeMap<String, MetricSummary>) -> Result<Ranking, EvalError> {
    if rules.is_empty() {
        return Err(EvalError::NothingToRank);
    }
    let mut order: Vec<(String, MetricSummary)> =
        rules.iter().map(|(id, s)| (id.clone(), *s)).collect();
    order.sort_by(|(ia, a), (ib, b)| b.p2_5.total_cmp(&a.p2_5).then_with(|| ia.cmp(ib)));
    let (winner, best) = order[0].clone();
    let not_dominated = order[1..]
        .iter()
        .filter(|(_, s)| !dominates(&best, s))
        .map(|(id, _)| id.clone())
        .collect();
    Ok(Ranking { order, winner, not_dominated })
}
