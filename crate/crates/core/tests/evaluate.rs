mod common;

use std::collections::BTreeMap;

use common::*;
use ppp_core::evaluate::{
    certainty_equivalent, dominates, export_density, leverage, rank_rules, robust_moments, sharpe_annualized,
    summarize, MetricSummary, SamplingDistribution,
};
use ppp_core::policy::PortfolioPath;
use rand::Rng;

fn fixture_528(seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    // skewed, fat-tailed monthly returns
    (0..528).map(|_| 0.008 + 0.04 * normal(&mut r) + 0.02 * normal(&mut r).powi(2) * normal(&mut r).signum()).collect()
}

#[test]
fn robust_moments_match_sort_and_average_oracles() {
    for seed in 0..5 {
        let v = fixture_528(seed);
        let m = robust_moments(&v).unwrap();
        let median = oracle_quantile(&v, 0.5);
        let mean = oracle_mean(&v);
        let sd = oracle_sd(&v);
        assert!((m.median - median).abs() < 1e-12);
        assert!((m.mean - mean).abs() < 1e-12);
        assert!((m.sd - sd).abs() < 1e-12);
        assert!((m.iqr - (oracle_quantile(&v, 0.75) - oracle_quantile(&v, 0.25))).abs() < 1e-12);
        assert!((m.s4 - (mean - median) / sd).abs() < 1e-12);
        assert!((m.k3 - oracle_k3(&v)).abs() < 1e-12);
        assert_eq!(m.min, v.iter().copied().fold(f64::INFINITY, f64::min));
    }
}

#[test]
fn k3_of_gaussian_draws_is_near_zero() {
    let v = normals(&mut rng(11), 100_000);
    let k3 = robust_moments(&v).unwrap().k3;
    assert!(k3.abs() < 0.05, "K3 = {k3}");
}

#[test]
fn summary_of_one_to_thousand() {
    let d = SamplingDistribution::new((1..=1000).map(f64::from).collect(), 0);
    let s = summarize(&d).unwrap();
    assert!((s.p2_5 - 25.975).abs() < 1e-12);
    assert!((s.mean - 500.5).abs() < 1e-12);
    assert!((s.p97_5 - 975.025).abs() < 1e-12);
}

#[test]
fn summary_matches_sort_oracle() {
    let mut r = rng(12);
    for n in [2, 7, 200, 1001] {
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-100.0..100.0)).collect();
        let s = summarize(&SamplingDistribution::new(v.clone(), 3)).unwrap();
        assert!((s.p2_5 - oracle_quantile(&v, 0.025)).abs() < 1e-12);
        assert!((s.p97_5 - oracle_quantile(&v, 0.975)).abs() < 1e-12);
        assert!((s.mean - oracle_mean(&v)).abs() < 1e-12);
    }
}

#[test]
fn sharpe_matches_direct_formula() {
    let v = fixture_528(3);
    let rf: Vec<f64> = (0..528).map(|i| 0.003 + 0.0001 * (i % 7) as f64).collect();
    let excess: Vec<f64> = v.iter().zip(&rf).map(|(a, b)| a - b).collect();
    let expected = oracle_mean(&excess) / oracle_sd(&excess) * 12f64.sqrt();
    let got = sharpe_annualized(&v, &rf).unwrap();
    assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
}

#[test]
fn sharpe_of_market_like_moments() {
    // excess returns with mean 0.69% and sd 4.31% exactly
    let base = normals(&mut rng(4), 600);
    let (m, s) = (oracle_mean(&base), oracle_sd(&base));
    let excess: Vec<f64> = base.iter().map(|x| 0.0069 + 0.0431 * (x - m) / s).collect();
    let sr = sharpe_annualized(&excess, &vec![0.0; 600]).unwrap();
    assert!((sr - 0.5546).abs() < 5e-5, "{sr}");
    assert_eq!(format!("{sr:.2}"), "0.55");
}

#[test]
fn leverage_matches_loop() {
    let mut r = rng(5);
    let neg: Vec<f64> = (0..120).map(|_| -r.random_range(0.0..2.0)).collect();
    let path = PortfolioPath { months: vec![start(); 120], returns: vec![0.0; 120], neg_weight_sum: neg.clone() };
    let mut total = 0.0;
    for v in &neg {
        total += v;
    }
    assert!((leverage(&path) - 100.0 * total / 120.0).abs() < 1e-12);
}

#[test]
fn ce_properties_on_random_paths() {
    let mut r = rng(6);
    for _ in 0..200 {
        let path: Vec<f64> = (0..120).map(|_| 0.01 + 0.06 * normal(&mut r)).collect();
        let mean_bp = oracle_mean(&path) * 1e4;
        let mut last = f64::INFINITY;
        for gamma in [1.5, 2.0, 5.0, 9.0, 20.0] {
            let ce = certainty_equivalent(&path, gamma).unwrap();
            assert!(ce <= mean_bp + 1e-12);
            assert!(ce <= last + 1e-12);
            last = ce;
        }
    }
}

#[test]
fn dominance_reproduces_headline_comparison() {
    let optimal = MetricSummary { p2_5: 257.4, mean: 300.0, p97_5: 350.0 };
    let ew = MetricSummary { p2_5: 60.0, mean: 80.0, p97_5: 104.8 };
    assert!(dominates(&optimal, &ew));
    assert!(!dominates(&ew, &optimal));
}

#[test]
fn not_dominated_set_matches_pairwise_check() {
    let mut r = rng(7);
    for _ in 0..1000 {
        let n = r.random_range(1..10);
        let rules: BTreeMap<String, MetricSummary> = (0..n)
            .map(|i| {
                let mean = r.random_range(-20.0..20.0);
                let lo = mean - r.random_range(0.0..15.0);
                let hi = mean + r.random_range(0.0..15.0);
                (format!("rule{i}"), MetricSummary { p2_5: (lo * 2.0_f64).round() / 2.0, mean, p97_5: hi })
            })
            .collect();
        let ranking = rank_rules(&rules).unwrap();
        let (winner, rest) = brute_not_dominated(&rules);
        assert_eq!(ranking.winner, winner);
        let mut got = ranking.not_dominated.clone();
        got.sort();
        assert_eq!(got, rest);
        for w in ranking.order.windows(2) {
            assert!(w[0].1.p2_5 >= w[1].1.p2_5);
        }
    }
}

#[test]
fn gaussian_density_peak() {
    let pool = normals(&mut rng(8), 400_000);
    let bins = export_density(&pool, 0.1).unwrap();
    let peak = bins.iter().map(|b| b.density).fold(0.0, f64::max);
    assert!((peak - 0.3989).abs() < 0.02, "{peak}");
    let mass: f64 = bins.iter().map(|b| b.density * 0.1).sum();
    assert!((mass - 1.0).abs() < 1e-12);
}
