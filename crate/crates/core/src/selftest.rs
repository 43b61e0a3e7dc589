//! Fast oracle and invariant checks run by `ppp selftest`.
//!
//! Each check compares library output against an independent computation on
//! random fixtures. The full suites live in the test targets; these are
//! smaller versions meant to validate a build on the target machine.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bootstrap::{run_experiment, ExperimentSpec};
use crate::evaluate::{certainty_equivalent, dominates, quantile_sorted, rank_rules, robust_moments, MetricSummary, CE_SENTINEL_BP};
use crate::factors::{variance_decomposition, FACTOR_PAIRS};
use crate::panel::{CrossSection, StockId};
use crate::parallel::Execution;
use crate::policy::{gradient, objective, optimize_theta, portfolio_weights, Protocol, RuleSpec, Tolerances};
use crate::synthgen::{generate_panel, DgpConfig};
use crate::Month;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// A standardized cross-section: columns have zero mean and unit sd,
/// value weights are positive and sum to one, returns are moderate.
pub fn random_cross_section<R: Rng>(rng: &mut R, month: Month, n: usize, k: usize, loadings: &[f64]) -> CrossSection {
    let mut x: Vec<f64> = (0..n * k).map(|_| StandardNormal.sample(rng)).collect();
    for j in 0..k {
        let mean = (0..n).map(|i| x[i * k + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x[i * k + j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        for i in 0..n {
            x[i * k + j] = (x[i * k + j] - mean) / sd;
        }
    }
    let caps: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
    let total: f64 = caps.iter().sum();
    let w_bar = caps.iter().map(|c| c / total).collect();
    let z: f64 = StandardNormal.sample(rng);
    let market = 0.008 + 0.04 * z;
    let returns = (0..n)
        .map(|i| {
            let signal: f64 = (0..k).map(|j| loadings.get(j).copied().unwrap_or(0.0) * x[i * k + j]).sum();
            let eps: f64 = StandardNormal.sample(rng);
            (market + signal + 0.08 * eps).max(-0.95)
        })
        .collect();
    let ids = (0..n as u64).map(StockId).collect();
    CrossSection::new(month, ids, returns, x, k, w_bar)
}

pub fn random_window<R: Rng>(rng: &mut R, n: usize, t: usize, k: usize, loadings: &[f64]) -> Vec<CrossSection> {
    let start = Month::new(2000, 1).expect("valid month");
    (0..t).map(|m| random_cross_section(rng, start.offset(m as i64), n, k, loadings)).collect()
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn weight_sum(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(5..60);
        let k = rng.random_range(1..6);
        let cs = random_cross_section(rng, Month::new(2000, 1).unwrap(), n, k, &[]);
        let theta: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let w = portfolio_weights(&cs, &theta).expect("matching dimensions");
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    check("weight_sum", worst < 1e-12, format!("max |sum w - 1| = {worst:.2e}"))
}

fn gradient_fd(rng: &mut ChaCha8Rng) -> CheckResult {
    let window = random_window(rng, 50, 60, 3, &[0.002, -0.001, 0.0]);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g = gradient(&window, &theta, 5.0).expect("feasible point");
        let f = |t: &[f64]| objective(&window, t, 5.0).unwrap().value().unwrap();
        for j in 0..3 {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            worst = worst.max((g[j] - fd).abs() / fd.abs().max(g[j].abs()).max(1e-8));
        }
    }
    check("gradient_fd", worst < 1e-5, format!("max relative error = {worst:.2e}"))
}

fn optimizer(rng: &mut ChaCha8Rng) -> CheckResult {
    let window = random_window(rng, 50, 60, 3, &[0.004, -0.002, 0.001]);
    let out = optimize_theta(&window, 5.0, &[0.0; 3], &Tolerances::default()).expect("optimizer runs");
    let f = |t: &[f64]| objective(&window, t, 5.0).unwrap().value().unwrap_or(f64::NEG_INFINITY);
    let beaten = (0..50).any(|_| {
        let d: Vec<f64> = (0..3).map(|_| StandardNormal.sample(rng)).collect();
        let norm = d.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let p: Vec<f64> = out.theta.iter().zip(&d).map(|(t, v)| t + 0.1 * v / norm).collect();
        f(&p) > out.objective
    });
    check(
        "optimizer",
        !beaten && out.grad_norm < 1e-8,
        format!("grad sup-norm = {:.2e}, perturbation improved = {beaten}", out.grad_norm),
    )
}

fn ce_oracle() -> CheckResult {
    let mut worst: f64 = 0.0;
    for gamma in [2.0, 5.0, 9.0] {
        for r in [-0.05, 0.0, 0.0123] {
            let ce = certainty_equivalent(&[r; 24], gamma).expect("valid input");
            worst = worst.max((ce - r * 1e4).abs());
        }
    }
    let sentinel = certainty_equivalent(&[0.01, -1.0, 0.02], 5.0).expect("valid input");
    check(
        "ce_oracle",
        worst < 1e-12 && sentinel == CE_SENTINEL_BP,
        format!("max error = {worst:.2e} bp, sentinel = {sentinel}"),
    )
}

fn moments_oracle(rng: &mut ChaCha8Rng) -> CheckResult {
    let draws: Vec<f64> = (0..528).map(|_| StandardNormal.sample(rng)).collect();
    let m = robust_moments(&draws).expect("dispersed sample");
    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let median = (sorted[263] + sorted[264]) / 2.0;
    let s4 = (mean - median) / sd;
    let err = (m.s4 - s4).abs().max((m.median - median).abs());

    let big: Vec<f64> = (0..50_000).map(|_| StandardNormal.sample(rng)).collect();
    let k3 = robust_moments(&big).expect("dispersed sample").k3;
    let q = quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.5);
    check(
        "robust_moments",
        err < 1e-12 && k3.abs() < 0.05 && q == 2.5,
        format!("oracle error = {err:.2e}, K3(normal) = {k3:.4}"),
    )
}

fn decomposition_identity(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let betas: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let a: [[f64; 4]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| StandardNormal.sample(rng)));
        let cov: [[f64; 4]; 4] =
            std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|l| a[i][l] * a[j][l]).sum::<f64>() * 1e-3));
        let resid = rng.random_range(1e-5..1e-2);
        let systematic: f64 = (0..4).map(|k| betas[k] * betas[k] * cov[k][k]).sum::<f64>()
            + FACTOR_PAIRS.iter().map(|&(j, k)| 2.0 * betas[j] * betas[k] * cov[j][k]).sum::<f64>();
        let shares = variance_decomposition(&betas, &cov, resid, systematic + resid).expect("positive variance");
        worst = worst.max((shares.total() - 1.0).abs());
    }
    check("decomposition_identity", worst < 1e-10, format!("max |sum - 1| = {worst:.2e}"))
}

fn benchmark_equivalence(rng: &mut ChaCha8Rng) -> CheckResult {
    let window = random_window(rng, 40, 24, 3, &[]);
    let worst = window
        .iter()
        .map(|cs| {
            let w = portfolio_weights(cs, &[0.0; 3]).unwrap();
            let r: f64 = w.iter().zip(cs.returns()).map(|(a, b)| a * b).sum();
            (r - cs.market_return()).abs()
        })
        .fold(0.0, f64::max);
    check("benchmark_equivalence", worst < 1e-15, format!("max |r - r_vw| = {worst:.2e}"))
}

fn dominance(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut mismatches = 0;
    for _ in 0..200 {
        let rules: BTreeMap<String, MetricSummary> = (0..rng.random_range(1..8))
            .map(|i| {
                let mean: f64 = rng.random_range(-50.0..50.0);
                let half: f64 = rng.random_range(1.0..40.0);
                (format!("r{i}"), MetricSummary { p2_5: mean - half, mean, p97_5: mean + half })
            })
            .collect();
        let ranking = rank_rules(&rules).expect("non-empty");
        let best = rules.values().map(|s| s.p2_5).fold(f64::NEG_INFINITY, f64::max);
        let winner = &rules[&ranking.winner];
        let expected: Vec<&String> = rules
            .iter()
            .filter(|(id, s)| *id != &ranking.winner && s.p97_5 >= winner.p2_5)
            .map(|(id, _)| id)
            .collect();
        let mut got: Vec<&String> = ranking.not_dominated.iter().collect();
        got.sort();
        if winner.p2_5 != best || got != expected || ranking.not_dominated.iter().any(|id| dominates(winner, &rules[id])) {
            mismatches += 1;
        }
    }
    check("dominance", mismatches == 0, format!("{mismatches} mismatches in 200 trials"))
}

fn determinism() -> CheckResult {
    let mut dgp = DgpConfig::null(2, 7);
    dgp.n_stocks = 40;
    dgp.n_months = 72;
    let data = generate_panel(&dgp).expect("valid generator config");
    let rule = RuleSpec {
        id: "r".into(),
        spec: dgp.policy_spec(),
        gamma_star: 5.0,
        protocol: Protocol::Updating,
        window_months: 48,
    };
    let run = |execution| {
        let mut exp = ExperimentSpec::new(vec![rule.clone()], vec![5.0], 6, 11);
        exp.panel.in_sample_months = 48;
        exp.execution = execution;
        run_experiment(&data.raw_panel, &exp).expect("experiment runs")
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel { threads: 4 });
    let same = a.replicates.len() == b.replicates.len()
        && a.replicates.iter().zip(&b.replicates).all(|(x, y)| {
            x.outcomes.iter().zip(&y.outcomes).all(|(p, q)| match (p, q) {
                (Ok(p), Ok(q)) => p.ce_bp.iter().zip(&q.ce_bp).all(|(u, v)| u.to_bits() == v.to_bits()),
                (Err(p), Err(q)) => p == q,
                _ => false,
            })
        });
    check("determinism", same, format!("sequential vs 4 threads identical = {same}"))
}

/// Runs every check with a fixed seed.
pub fn run_all() -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_917);
    vec![
        weight_sum(&mut rng),
        gradient_fd(&mut rng),
        optimizer(&mut rng),
        ce_oracle(),
        moments_oracle(&mut rng),
        decomposition_identity(&mut rng),
        benchmark_equivalence(&mut rng),
        dominance(&mut rng),
        determinism(),
    ]
}
