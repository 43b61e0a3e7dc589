//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ppp_core::evaluate::MetricSummary;
use ppp_core::panel::{Characteristic, CrossSection, RawObs, RawPanel, RawSection, StockId};
use ppp_core::Month;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn start() -> Month {
    Month::from_yyyymm(198001).unwrap()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// OLS through `(X'X)^{-1} X'y`; rows of `x` already include any constant.
pub fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (row, yi) in x.iter().zip(y) {
        for i in 0..p {
            xty[i] += row[i] * yi;
            for j in 0..p {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    gauss_solve(xtx, xty)
}

/// Weights by a double loop over stocks and characteristics.
pub fn naive_weights(cs: &CrossSection, theta: &[f64]) -> Vec<f64> {
    let n = cs.len();
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let mut tilt = 0.0;
        for (j, t) in theta.iter().enumerate() {
            tilt += t * cs.row(i)[j];
        }
        w.push(cs.w_bar()[i] + tilt / n as f64);
    }
    w
}

/// Quantile at `h = (n - 1) p + 1` (one-based) with linear interpolation.
pub fn oracle_quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (v.len() as f64 - 1.0) * p + 1.0;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo >= v.len() {
        return v[v.len() - 1];
    }
    v[lo - 1] + frac * (v[lo] - v[lo - 1])
}

pub fn oracle_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn oracle_sd(v: &[f64]) -> f64 {
    let m = oracle_mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Robust kurtosis from sorted tails and halves.
pub fn oracle_k3(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let tail = (0.05 * n as f64).ceil() as usize;
    let half = n / 2;
    let upper_tail = oracle_mean(&v[n - tail..]);
    let lower_tail = oracle_mean(&v[..tail]);
    let upper_half = oracle_mean(&v[n - half..]);
    let lower_half = oracle_mean(&v[..half]);
    (upper_tail - lower_tail) / (upper_half - lower_half) - 2.63
}

/// Rules other than the top one that the top one fails to dominate,
/// found by comparing every pair.
pub fn brute_not_dominated(rules: &BTreeMap<String, MetricSummary>) -> (String, Vec<String>) {
    let mut winner: Option<(&String, &MetricSummary)> = None;
    for (id, s) in rules {
        let better = match winner {
            None => true,
            Some((wid, w)) => s.p2_5 > w.p2_5 || (s.p2_5 == w.p2_5 && id < wid),
        };
        if better {
            winner = Some((id, s));
        }
    }
    let (wid, w) = winner.unwrap();
    let mut rest: Vec<String> = Vec::new();
    for (id, s) in rules {
        if id != wid && !(w.p2_5 > s.p97_5) {
            rest.push(id.clone());
        }
    }
    rest.sort();
    (wid.clone(), rest)
}

/// Raw panel with `n_per_month[t]` stocks in month `t` and all seven
/// characteristics drawn at random.
pub fn random_raw_panel(rng: &mut ChaCha8Rng, n_per_month: &[usize]) -> RawPanel {
    let sections = n_per_month
        .iter()
        .enumerate()
        .map(|(t, &n)| RawSection {
            month: start().offset(t as i64),
            rows: (0..n)
                .map(|i| RawObs {
                    stock_id: StockId(i as u64 * 3 + 1),
                    ret: 0.01 + 0.08 * normal(rng),
                    mktcap_prev: rng.random_range(1e6..1e9),
                    is_financial: rng.random::<f64>() < 0.1,
                    chars: std::array::from_fn(|_| Some(StandardNormal.sample(rng))),
                })
                .collect(),
        })
        .collect();
    RawPanel { sections }
}

pub fn spec(chars: &[Characteristic]) -> ppp_core::panel::CharacteristicSpec {
    ppp_core::panel::CharacteristicSpec::new(chars.iter().copied(), ppp_core::panel::VTreatment::All).unwrap()
}
