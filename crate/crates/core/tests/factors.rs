mod common;

use common::*;
use ppp_core::factors::{
    decompose, factor_covariance, factor_summary, regress_ffc, report_components, variance_decomposition,
    FactorPanel, VarianceShares, FACTOR_PAIRS,
};
use ppp_core::panel::{standardize, CharacteristicSpec, PanelOptions};
use ppp_core::policy::{value_weighted_path, PortfolioPath};
use ppp_core::synthgen::{generate_panel, market_series, synthetic_factors, DgpConfig};
use rand::Rng;

fn random_factors(seed: u64, n: usize) -> FactorPanel {
    let mut r = rng(seed);
    let mut f = FactorPanel::default();
    for t in 0..n {
        let common = normal(&mut r);
        f.push(
            start().offset(t as i64),
            0.006 + 0.045 * normal(&mut r),
            0.002 + 0.03 * (0.4 * common + normal(&mut r)),
            0.003 + 0.03 * (-0.3 * common + normal(&mut r)),
            0.006 + 0.04 * normal(&mut r),
            0.003,
        );
    }
    f
}

#[test]
fn regression_matches_normal_equations() {
    for seed in 0..10 {
        let f = random_factors(seed, 240);
        let mut r = rng(100 + seed);
        let betas: Vec<f64> = (0..4).map(|_| r.random_range(-1.5..1.5)).collect();
        let returns: Vec<f64> = (0..f.len())
            .map(|t| f.rf[t] + 0.001 + (0..4).map(|j| betas[j] * f.factor(j)[t]).sum::<f64>() + 0.02 * normal(&mut r))
            .collect();
        let path = PortfolioPath { months: f.months.clone(), returns: returns.clone(), neg_weight_sum: vec![0.0; f.len()] };
        let fit = regress_ffc(&path, &f).unwrap();
        let x: Vec<Vec<f64>> = (0..f.len()).map(|t| vec![1.0, f.mkt_rf[t], f.smb[t], f.hml[t], f.mom[t]]).collect();
        let y: Vec<f64> = returns.iter().zip(&f.rf).map(|(a, b)| a - b).collect();
        let oracle = normal_equations(&x, &y);
        assert!((fit.alpha - oracle[0]).abs() < 1e-10);
        for j in 0..4 {
            assert!((fit.betas[j] - oracle[j + 1]).abs() < 1e-10);
        }
        // residuals orthogonal to the constant and every factor
        let scale = fit.residuals.iter().map(|e| e.abs()).sum::<f64>();
        for col in 0..5 {
            let dot: f64 = fit.residuals.iter().zip(&x).map(|(e, row)| e * row[col]).sum();
            assert!(dot.abs() < 1e-8 * scale.max(1.0), "column {col}: {dot}");
        }
    }
}

#[test]
fn two_correlated_factors_against_hand_expansion() {
    let (b1, b2) = (0.9, -0.4);
    let (v1, v2, c12) = (0.0020, 0.0009, 0.0006);
    let resid = 0.0004;
    let total = b1 * b1 * v1 + b2 * b2 * v2 + 2.0 * b1 * b2 * c12 + resid;
    let mut cov = [[0.0; 4]; 4];
    cov[0][0] = v1;
    cov[1][1] = v2;
    cov[0][1] = c12;
    cov[1][0] = c12;
    let s = variance_decomposition(&[b1, b2, 0.0, 0.0], &cov, resid, total).unwrap();
    assert!((s.own[0] - 0.9 * 0.9 * 0.0020 / total).abs() < 1e-12);
    assert!((s.own[1] - 0.16 * 0.0009 / total).abs() < 1e-12);
    assert!((s.cross[0] - 2.0 * 0.9 * -0.4 * 0.0006 / total).abs() < 1e-12);
    assert!((s.orthogonal - 0.0004 / total).abs() < 1e-12);
    assert!((s.total() - 1.0).abs() < 1e-12);
}

#[test]
fn decomposed_paths_add_up() {
    for seed in 0..20 {
        let f = random_factors(seed, 120);
        let mut r = rng(seed + 50);
        let returns: Vec<f64> =
            (0..f.len()).map(|t| f.rf[t] + 1.2 * f.mkt_rf[t] - 0.5 * f.hml[t] + 0.01 * normal(&mut r)).collect();
        let path = PortfolioPath { months: f.months.clone(), returns, neg_weight_sum: vec![0.0; f.len()] };
        let d = decompose(&path, &f).unwrap();
        assert!((d.shares.total() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn covariance_and_summary_match_naive_oracle() {
    let f = random_factors(3, 300);
    let cov = factor_covariance(&f);
    let summary = factor_summary(&f);
    for i in 0..4 {
        for j in 0..4 {
            let (a, b) = (f.factor(i), f.factor(j));
            let (ma, mb) = (oracle_mean(a), oracle_mean(b));
            let c = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
            assert!((cov[i][j] - c).abs() < 1e-12);
        }
        assert!((summary.means_bp[i] - oracle_mean(f.factor(i)) * 1e4).abs() < 1e-9);
    }
    for (j, k) in FACTOR_PAIRS {
        assert_eq!(summary.vol_corr[j][k], summary.vol_corr[k][j]);
    }
}

#[test]
fn planted_market_volatility_reported_in_percent() {
    let base = normals(&mut rng(9), 600);
    let (m, s) = (oracle_mean(&base), oracle_sd(&base));
    let mut f = FactorPanel::default();
    for (t, z) in base.iter().enumerate() {
        f.push(start().offset(t as i64), 0.006 + 0.0441 * (z - m) / s, 0.0, 0.001 * (t % 3) as f64, 0.0, 0.003);
    }
    let summary = factor_summary(&f);
    assert!((summary.vol_corr[0][0] - 4.41).abs() < 1e-10);
    assert_eq!(format!("{:.2}", summary.vol_corr[0][0]), "4.41");
}

#[test]
fn threshold_filtering() {
    let mut shares = VarianceShares { own: [0.5, 0.1, 0.1, 0.1], cross: [0.0; 6], orthogonal: 0.2 };
    assert_eq!(report_components(&shares, 0.05).entries.len(), 5);
    shares.cross[0] = -0.08;
    shares.orthogonal += 0.08;
    assert!(report_components(&shares, 0.05).entries.iter().any(|(n, v)| n == "Cov(MKT,SMB)" && *v == -0.08));
    shares.cross[0] = 0.049;
    let r = report_components(&shares, 0.05);
    assert!(!r.entries.iter().any(|(n, _)| n.starts_with("Cov(")));
}

#[test]
fn benchmark_on_its_own_market_factor() {
    let mut dgp = DgpConfig::default();
    dgp.n_stocks = 80;
    dgp.n_months = 120;
    let data = generate_panel(&dgp).unwrap();
    let rf = 0.0037;
    let factors = synthetic_factors(&market_series(&data.raw_panel), rf, 4);
    let panel = standardize(
        &data.raw_panel,
        &CharacteristicSpec::empty(),
        &PanelOptions { in_sample_months: 60, ..PanelOptions::default() },
    )
    .unwrap();
    let path = value_weighted_path(&panel);
    let fit = regress_ffc(&path, &factors).unwrap();
    assert!(fit.alpha.abs() < 1e-10);
    assert!((fit.betas[0] - 1.0).abs() < 1e-10);
    assert!(fit.betas[1..].iter().all(|b| b.abs() < 1e-10));
    assert!(fit.residual_variance.abs() < 1e-10);
}
