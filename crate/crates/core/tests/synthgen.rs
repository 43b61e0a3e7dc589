mod common;

use common::*;
use ppp_core::bootstrap::{evaluate_original, run_experiment, ExperimentSpec, VW_ID};
use ppp_core::panel::{
    apply_filters, build_characteristics, load_raw, standardize, value_weighted_index, write_raw_history, Deflator,
    FilterConfig, PanelOptions,
};
use ppp_core::policy::{gradient, optimize_theta, run_protocol, Protocol, RuleSpec, Tolerances};
use ppp_core::synthgen::{generate_panel, oracle_theta, sha256_hex, DgpConfig, OracleOptions};

fn updating(spec: ppp_core::panel::CharacteristicSpec, gamma_star: f64) -> RuleSpec {
    RuleSpec { id: "rule".into(), spec, gamma_star, protocol: Protocol::Updating, window_months: 180 }
}

#[test]
fn history_file_round_trips_with_manifest_checksum() {
    let mut dgp = DgpConfig::default();
    dgp.n_months = 252;
    let data = generate_panel(&dgp).unwrap();
    let mut bytes = Vec::new();
    write_raw_history(&data.history, &mut bytes).unwrap();
    assert_eq!(sha256_hex(&bytes), data.manifest.history_sha256);
    let loaded = load_raw(bytes.as_slice(), &Default::default()).unwrap();
    assert_eq!(loaded.len(), 50_400);
    assert_eq!(loaded, data.history);
}

#[test]
fn filtered_history_keeps_exactly_the_eligible_stocks() {
    let mut dgp = DgpConfig::default();
    dgp.n_stocks = 120;
    dgp.n_months = 100;
    dgp.small_share = 0.15;
    let data = generate_panel(&dgp).unwrap();
    assert!(!data.manifest.planted_small_ids.is_empty());

    let index = value_weighted_index(&data.history);
    let candidates = build_characteristics(&data.history, &index, 60, true).unwrap();
    let months = data.history.iter().flat_map(|r| [r.month, r.month.offset(-1)]);
    let filters = FilterConfig {
        min_real_size: 1e4,
        deflator: Deflator::flat(months.chain([FilterConfig::default().deflator_base])),
        small_pct_before: 0.0,
        small_pct_after: 0.0,
        ..FilterConfig::default()
    };
    let (filtered, log) = apply_filters(&candidates, &filters).unwrap();
    assert!(!filtered.sections.is_empty());
    assert!(log.months.iter().all(|m| m.below_min_size == data.manifest.planted_small_ids.len()));
    for section in &filtered.sections {
        let expected: Vec<u64> = data
            .raw_panel
            .sections
            .iter()
            .find(|s| s.month == section.month)
            .unwrap()
            .rows
            .iter()
            .map(|r| r.stock_id.0)
            .collect();
        let got: Vec<u64> = section.rows.iter().map(|r| r.stock_id.0).collect();
        assert_eq!(got, expected, "month {}", section.month);
    }
}

#[test]
fn standardized_synthetic_columns_are_normalized() {
    let dgp = DgpConfig::weak_signal(3);
    let data = generate_panel(&dgp).unwrap();
    let panel = standardize(&data.raw_panel, &dgp.policy_spec(), &PanelOptions::default()).unwrap();
    for cs in &panel.sections {
        for j in 0..cs.k() {
            let col: Vec<f64> = cs.column(j).collect();
            assert!(oracle_mean(&col).abs() < 1e-12);
            assert!((oracle_sd(&col) - 1.0).abs() < 1e-12);
        }
        assert!((cs.w_bar().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn null_theta_is_within_three_bootstrap_standard_errors() {
    let dgp = DgpConfig::null(1, DgpConfig::default().seed);
    let data = generate_panel(&dgp).unwrap();
    let rule = updating(dgp.policy_spec(), 5.0);
    let panel = standardize(&data.raw_panel, &rule.spec, &PanelOptions::default()).unwrap();
    let theta = run_protocol(&panel, &rule, &Tolerances::default()).unwrap().thetas[0].theta[0];

    let res = run_experiment(&data.raw_panel, &ExperimentSpec::new(vec![rule], vec![5.0], 100, 4)).unwrap();
    let e = res.entry_index("rule").unwrap();
    let draws: Vec<f64> = res.distribution(e, |m| Some(m.thetas[0].theta[0])).values;
    let se = oracle_sd(&draws);
    assert!(theta.abs() < 3.0 * se, "theta {theta}, bootstrap se {se}");
}

#[test]
fn signs_are_recovered_in_almost_every_panel() {
    let mut recovered = 0;
    for seed in 0..200 {
        let mut dgp = DgpConfig::default();
        dgp.n_months = 240;
        dgp.seed = 500 + seed;
        let data = generate_panel(&dgp).unwrap();
        let rule = updating(dgp.policy_spec(), 5.0);
        let panel = standardize(&data.raw_panel, &rule.spec, &PanelOptions::default()).unwrap();
        let run = run_protocol(&panel, &rule, &Tolerances::default()).unwrap();
        let years = run.thetas.len() as f64;
        let avg: Vec<f64> = (0..3).map(|j| run.thetas.iter().map(|t| t.theta[j]).sum::<f64>() / years).collect();
        recovered += usize::from(avg[0] > 0.0 && avg[2] < 0.0);
    }
    assert!(recovered >= 190, "signs recovered in {recovered} of 200 panels");
}

#[test]
fn oracle_coefficients_shrink_with_curvature() {
    let mut dgp = DgpConfig::default();
    dgp.k = 1;
    dgp.signal_loadings = vec![0.001];
    let opts = OracleOptions { months: 200_000, ..OracleOptions::default() };
    let thetas: Vec<f64> =
        [2.0, 5.0, 10.0, 20.0].iter().map(|g| oracle_theta(&dgp, *g, &opts).unwrap().theta[0]).collect();
    assert!(thetas[0] > 0.0);
    for w in thetas.windows(2) {
        assert!(w[1].abs() < w[0].abs(), "{thetas:?}");
    }
}

/// Newey-West (12 lags) sandwich standard errors of the sample optimum.
fn sandwich_se(window: &[ppp_core::panel::CrossSection], theta: &[f64], gamma_star: f64) -> Vec<f64> {
    let k = theta.len();
    let t = window.len();
    let scores: Vec<Vec<f64>> = window.iter().map(|cs| gradient(std::slice::from_ref(cs), theta, gamma_star).unwrap()).collect();
    let mut s = vec![vec![0.0; k]; k];
    for lag in 0..=12usize {
        let weight = if lag == 0 { 1.0 } else { 1.0 - lag as f64 / 13.0 };
        for u in lag..t {
            for i in 0..k {
                for j in 0..k {
                    let v = scores[u][i] * scores[u - lag][j];
                    s[i][j] += weight * if lag == 0 { v } else { v + scores[u - lag][i] * scores[u][j] } / t as f64;
                }
            }
        }
    }
    let h = 1e-4;
    let mut hess = vec![vec![0.0; k]; k];
    for j in 0..k {
        let (mut up, mut dn) = (theta.to_vec(), theta.to_vec());
        up[j] += h;
        dn[j] -= h;
        let (gu, gd) = (gradient(window, &up, gamma_star).unwrap(), gradient(window, &dn, gamma_star).unwrap());
        for i in 0..k {
            hess[i][j] = (gu[i] - gd[i]) / (2.0 * h);
        }
    }
    // column j of H^-1 S H^-1 via two solves
    let hinv_s: Vec<Vec<f64>> = (0..k).map(|j| gauss_solve(hess.clone(), (0..k).map(|i| s[i][j]).collect())).collect();
    (0..k)
        .map(|i| {
            let col: Vec<f64> = (0..k).map(|j| hinv_s[j][i]).collect();
            (gauss_solve(hess.clone(), col)[i] / t as f64).sqrt()
        })
        .collect()
}

#[test]
fn long_window_estimate_is_consistent_with_the_oracle() {
    let mut dgp = DgpConfig::default();
    dgp.n_months = 5000;
    dgp.seed = 77;
    let gamma_star = 5.0;
    let data = generate_panel(&dgp).unwrap();
    let panel = standardize(
        &data.raw_panel,
        &dgp.policy_spec(),
        &PanelOptions { in_sample_months: 5000, ..PanelOptions::default() },
    )
    .unwrap();
    let fit = optimize_theta(&panel.sections, gamma_star, &[0.0; 3], &Tolerances::default()).unwrap();
    let se = sandwich_se(&panel.sections, &fit.theta, gamma_star);
    let oracle = oracle_theta(&dgp, gamma_star, &OracleOptions::default()).unwrap();
    for j in 0..3 {
        let combined = (se[j].powi(2) + oracle.std_error[j].powi(2)).sqrt();
        let gap = (fit.theta[j] - oracle.theta[j]).abs();
        assert!(gap < 2.0 * combined, "theta[{j}]: sample {} oracle {} se {combined}", fit.theta[j], oracle.theta[j]);
    }
}

#[test]
fn weak_signal_design_overfits_often_at_low_curvature() {
    // replicates pooled over the nine calibration runs
    let (mut below, mut total) = (0, 0);
    for seed in 1..=9u64 {
        let dgp = DgpConfig::weak_signal(seed);
        let data = generate_panel(&dgp).unwrap();
        let rule = updating(dgp.policy_spec(), 2.0);
        let exp = ExperimentSpec::new(vec![rule], vec![2.0], 200, 1000 + seed);
        let res = run_experiment(&data.raw_panel, &exp).unwrap();
        let rule_ce = res.ce(res.entry_index("rule").unwrap(), 0).values;
        let vw_ce = res.ce(res.entry_index(VW_ID).unwrap(), 0).values;
        below += rule_ce.iter().zip(&vw_ce).filter(|(r, v)| r < v).count();
        total += rule_ce.len();
    }
    assert!(below as f64 >= 0.3 * total as f64, "rule below the benchmark in {below} of {total} replicates");
}

#[test]
fn null_signal_rules_are_indistinguishable_from_the_benchmark() {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for seed in 0..200 {
        let dgp = DgpConfig::null(2, 1000 + seed);
        let data = generate_panel(&dgp).unwrap();
        let rule = RuleSpec {
            id: "null".into(),
            spec: dgp.policy_spec(),
            gamma_star: 5.0,
            protocol: Protocol::Updating,
            window_months: 180,
        };
        let exp = ExperimentSpec::new(vec![rule], vec![5.0], 1, 8);
        let res = evaluate_original(&data.raw_panel, &exp).unwrap();
        a.push(res.ce(res.entry_index("null").unwrap(), 0).values[0]);
        b.push(res.ce(res.entry_index(VW_ID).unwrap(), 0).values[0]);
    }
    // Welch two-sample t statistic against the 1% two-sided normal critical value
    let se = (oracle_sd(&a).powi(2) / a.len() as f64 + oracle_sd(&b).powi(2) / b.len() as f64).sqrt();
    let t = (oracle_mean(&a) - oracle_mean(&b)) / se;
    assert!(t.abs() < 2.576, "t = {t}");
}
