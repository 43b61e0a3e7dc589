//! Synthetic panels with a known data-generating process.
//!
//! Latent characteristics follow independent AR(1) processes with unit
//! stationary variance, and returns are linear in them:
//! `r_i,t = m_t + b'x_i,t-1 + e_i,t`. Market capitalizations follow an
//! independent persistent lognormal process.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::factors::FactorPanel;
use crate::month::Month;
use crate::panel::{
    write_panel_csv, write_raw_history, Characteristic, CharacteristicSpec, Exchange, RawObs, RawPanel, RawSection,
    RawStockMonth, StockId, VTreatment,
};

/// Canonical column receiving latent characteristic `j`. Every column is
/// filled; those beyond `k` carry no signal.
pub const LATENT_COLUMNS: [Characteristic; 7] = [
    Characteristic::Momentum,
    Characteristic::BookToMarket,
    Characteristic::LogSize,
    Characteristic::Beta,
    Characteristic::ResidualVol,
    Characteristic::SameMonthMean,
    Characteristic::LagTwelve,
];

/// Loading pattern of the weak-signal configuration, before scaling.
pub const WEAK_SIGNAL_PATTERN: [f64; 5] = [1.0, -1.0, 0.5, 0.0, 0.0];

/// Scale applied to [`WEAK_SIGNAL_PATTERN`], found by pilot runs so that the
/// gamma* = 2 rule loses to the market in a sizable share of samples while
/// higher curvatures gain.
pub const WEAK_SIGNAL_SCALE: f64 = 0.0012;

const RETURN_FLOOR: f64 = -0.99;

/// Capitalization multiplier for planted micro-caps.
pub const SMALL_CAP_FACTOR: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n_stocks: usize,
    pub n_months: usize,
    /// Number of signal-bearing characteristics (at most 7).
    pub k: usize,
    /// Expected-return effect per unit latent characteristic, fraction per month.
    pub signal_loadings: Vec<f64>,
    pub noise_sd: f64,
    pub market_mean: f64,
    pub market_sd: f64,
    /// AR(1) coefficient per characteristic; a single value applies to all.
    pub char_persistence: Vec<f64>,
    pub seed: u64,
    pub start_month: Month,
    pub cap_log_mean: f64,
    pub cap_log_sd: f64,
    pub cap_persistence: f64,
    pub financial_share: f64,
    /// Share of stocks planted as micro-caps (capitalization times
    /// [`SMALL_CAP_FACTOR`]). They appear in the raw history but never in the
    /// eligible panel.
    pub small_share: f64,
    /// Floor returns at -99%; disable to exercise total-loss paths.
    pub truncate_returns: bool,
    /// Scale the loadings were built with (1 when set directly).
    pub calibration_scale: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n_stocks: 200,
            n_months: 360,
            k: 3,
            signal_loadings: vec![0.002, 0.0, -0.002],
            noise_sd: 0.10,
            market_mean: 0.008,
            market_sd: 0.045,
            char_persistence: vec![0.9],
            seed: 1,
            start_month: Month::from_yyyymm(197001).expect("valid month"),
            cap_log_mean: 19.0,
            cap_log_sd: 1.2,
            cap_persistence: 0.98,
            financial_share: 0.1,
            small_share: 0.0,
            truncate_returns: true,
            calibration_scale: 1.0,
        }
    }
}

impl DgpConfig {
    /// The calibrated weak-signal design: 200 stocks, 360 months, five characteristics.
    pub fn weak_signal(seed: u64) -> Self {
        Self {
            k: 5,
            signal_loadings: WEAK_SIGNAL_PATTERN.iter().map(|p| p * WEAK_SIGNAL_SCALE).collect(),
            calibration_scale: WEAK_SIGNAL_SCALE,
            seed,
            ..Self::default()
        }
    }

    /// No cross-sectional signal.
    pub fn null(k: usize, seed: u64) -> Self {
        Self { k, signal_loadings: vec![0.0; k], seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.k > 7 {
            return bad(format!("k = {} exceeds the 7 available columns", self.k));
        }
        if self.signal_loadings.len() != self.k {
            return bad(format!("{} loadings for k = {}", self.signal_loadings.len(), self.k));
        }
        if self.n_stocks < 2 || self.n_months == 0 {
            return bad("need at least 2 stocks and 1 month".into());
        }
        if !(self.noise_sd > 0.0) || !(self.market_sd >= 0.0) || !(self.cap_log_sd >= 0.0) {
            return bad("standard deviations must be positive".into());
        }
        if !(self.char_persistence.len() == 1 || self.char_persistence.len() == self.k) {
            return bad("char_persistence needs 1 or k entries".into());
        }
        if self.char_persistence.iter().chain([&self.cap_persistence]).any(|p| !(0.0..1.0).contains(p)) {
            return bad("persistence must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.financial_share) {
            return bad("financial_share must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.small_share) {
            return bad("small_share must lie in [0, 1)".into());
        }
        Ok(())
    }

    fn persistence(&self, j: usize) -> f64 {
        if j < self.k && self.char_persistence.len() == self.k {
            self.char_persistence[j]
        } else {
            self.char_persistence[0]
        }
    }

    /// The characteristic set carrying the signal, in canonical order.
    pub fn policy_spec(&self) -> CharacteristicSpec {
        CharacteristicSpec::new(LATENT_COLUMNS[..self.k].iter().copied(), VTreatment::All)
            .expect("latent columns never include r_lag12 without r_bar")
    }

    /// Loadings reordered to match [`DgpConfig::policy_spec`].
    pub fn canonical_loadings(&self) -> Vec<f64> {
        self.policy_spec()
            .characteristics()
            .iter()
            .map(|c| {
                let j = LATENT_COLUMNS.iter().position(|l| l == c).expect("mapped column");
                self.signal_loadings[j]
            })
            .collect()
    }

    pub fn months(&self) -> Vec<Month> {
        (0..self.n_months).map(|t| self.start_month.offset(t as i64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DgpConfig,
    /// True loadings keyed by canonical column name.
    pub true_loadings: BTreeMap<String, f64>,
    pub calibration_scale: f64,
    /// Stocks present in each month of the eligible panel.
    pub eligible_per_month: Vec<(Month, usize)>,
    /// Digest of the `month,stock_id` lines of the eligible panel.
    pub eligible_ids_sha256: String,
    pub planted_small_ids: Vec<u64>,
    /// Digest of the prebuilt-panel CSV bytes.
    pub panel_sha256: String,
    /// Digest of the raw-history CSV bytes.
    pub history_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub raw_panel: RawPanel,
    pub history: Vec<RawStockMonth>,
    pub manifest: Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Simulates the panel and its raw history; pure in `config`.
pub fn generate_panel(config: &DgpConfig) -> Result<SyntheticData, SynthError> {
    config.validate()?;
    let n = config.n_stocks;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let is_financial: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < config.financial_share).collect();
    let exchange: Vec<Exchange> = (0..n)
        .map(|_| match rng.random::<f64>() {
            u if u < 0.5 => Exchange::Nyse,
            u if u < 0.6 => Exchange::Amex,
            _ => Exchange::Nasdaq,
        })
        .collect();
    let mut x: Vec<[f64; 7]> = (0..n).map(|_| std::array::from_fn(|_| normal(&mut rng))).collect();
    let cap_innov = (1.0 - config.cap_persistence.powi(2)).sqrt() * config.cap_log_sd;
    let mut log_cap: Vec<f64> =
        (0..n).map(|_| config.cap_log_mean + config.cap_log_sd * normal(&mut rng)).collect();
    let char_innov: Vec<f64> = (0..7).map(|j| (1.0 - config.persistence(j).powi(2)).sqrt()).collect();
    // separate stream so the default design is unaffected
    let planted: Vec<bool> = if config.small_share > 0.0 {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed ^ 0x736d_616c_6c00);
        (0..n).map(|_| r.random::<f64>() < config.small_share).collect()
    } else {
        vec![false; n]
    };
    let cap_scale = |i: usize| if planted[i] { SMALL_CAP_FACTOR } else { 1.0 };

    let mut sections = Vec::with_capacity(config.n_months);
    let mut history = Vec::with_capacity(config.n_months * n);
    for month in config.months() {
        let m = config.market_mean + config.market_sd * normal(&mut rng);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let signal: f64 = config.signal_loadings.iter().zip(&x[i]).map(|(b, v)| b * v).sum();
            let mut ret = m + signal + config.noise_sd * normal(&mut rng);
            if config.truncate_returns {
                ret = ret.max(RETURN_FLOOR);
            }
            let mut chars = [None; 7];
            for (col, v) in LATENT_COLUMNS.iter().zip(&x[i]) {
                chars[col.index()] = Some(*v);
            }
            if !planted[i] {
                rows.push(RawObs {
                    stock_id: StockId(i as u64 + 1),
                    ret,
                    mktcap_prev: log_cap[i].exp(),
                    is_financial: is_financial[i],
                    chars,
                });
            }

            for (j, v) in x[i].iter_mut().enumerate() {
                *v = config.persistence(j) * *v + char_innov[j] * normal(&mut rng);
            }
            log_cap[i] = config.cap_log_mean
                + config.cap_persistence * (log_cap[i] - config.cap_log_mean)
                + cap_innov * normal(&mut rng);
            let cap = log_cap[i].exp() * cap_scale(i);
            history.push(RawStockMonth {
                stock_id: StockId(i as u64 + 1),
                month,
                ret: Some(ret),
                market_cap: cap,
                book_value: Some(cap * (0.5 * x[i][1] - 0.5).exp()),
                is_financial: is_financial[i],
                exchange: exchange[i],
                delisted: false,
                delist_ret: None,
            });
        }
        sections.push(RawSection { month, rows });
    }
    let raw_panel = RawPanel { sections };

    let mut panel_bytes = Vec::new();
    write_panel_csv(&raw_panel, &mut panel_bytes)?;
    let mut history_bytes = Vec::new();
    write_raw_history(&history, &mut history_bytes)?;
    let mut ids = Sha256::new();
    for s in &raw_panel.sections {
        for r in &s.rows {
            ids.update(format!("{},{}\n", s.month, r.stock_id.0).as_bytes());
        }
    }
    let manifest = Manifest {
        config: config.clone(),
        true_loadings: LATENT_COLUMNS[..config.k]
            .iter()
            .zip(&config.signal_loadings)
            .map(|(c, b)| (c.name().to_string(), *b))
            .collect(),
        calibration_scale: config.calibration_scale,
        eligible_per_month: raw_panel.sections.iter().map(|s| (s.month, s.rows.len())).collect(),
        eligible_ids_sha256: hex::encode(ids.finalize()),
        planted_small_ids: (0..n).filter(|&i| planted[i]).map(|i| i as u64 + 1).collect(),
        panel_sha256: sha256_hex(&panel_bytes),
        history_sha256: sha256_hex(&history_bytes),
    };
    Ok(SyntheticData { raw_panel, history, manifest })
}

/// Value-weighted return of each raw section.
pub fn market_series(raw: &RawPanel) -> Vec<(Month, f64)> {
    raw.sections
        .iter()
        .map(|s| {
            let cap: f64 = s.rows.iter().map(|r| r.mktcap_prev).sum();
            (s.month, s.rows.iter().map(|r| r.mktcap_prev * r.ret).sum::<f64>() / cap)
        })
        .collect()
}

/// Factor panel whose market factor is `market - rf`; the other three
/// factors are independent normal series with typical monthly volatilities.
pub fn synthetic_factors(market: &[(Month, f64)], rf: f64, seed: u64) -> FactorPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = FactorPanel::default();
    for &(month, m) in market {
        let smb = 0.002 + 0.030 * normal(&mut rng);
        let hml = 0.003 + 0.029 * normal(&mut rng);
        let mom = 0.006 + 0.044 * normal(&mut rng);
        f.push(month, m - rf, smb, hml, mom, rf);
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Simulated months (rounded up to an even number).
    pub months: usize,
    pub seed: u64,
    /// Coordinate sweeps of the golden-section search.
    pub sweeps: usize,
    pub tolerance: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { months: 1_000_000, seed: 0x5eed, sweeps: 50, tolerance: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTheta {
    /// Population-optimal coefficients in [`DgpConfig::policy_spec`] order.
    pub theta: Vec<f64>,
    pub std_error: Vec<f64>,
    pub objective: f64,
}

/// Simulated (market return, tilt returns) pairs under the DGP.
///
/// For standardized characteristics the policy return depends on a month
/// only through the value-weighted return and `a = (1/N) X'r`. Given the
/// sample covariance `S` of the latent characteristics (Wishart, drawn by
/// Bartlett's decomposition), `a` is normal with mean
/// `((N-1)/N) D^-1 S b` and covariance `s^2 (N-1)/N^2 R`, `R` the sample
/// correlation. Noise enters in antithetic pairs. The value-weighted
/// return is drawn as normal with variance `sd_m^2 + H (|b|^2 + s^2)`, `H`
/// the expected Herfindahl index of the weights; its small correlation
/// with `a` is ignored.
fn simulate_moments(config: &DgpConfig, b: &[f64], opts: &OracleOptions) -> (Vec<f64>, Vec<f64>) {
    let k = b.len();
    let n = config.n_stocks as f64;
    let pairs = opts.months.div_ceil(2);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let chi: Vec<ChiSquared<f64>> =
        (0..k).map(|i| ChiSquared::new(n - 1.0 - i as f64).expect("positive degrees of freedom")).collect();
    let herfindahl = (config.cap_log_sd * config.cap_log_sd).exp() / n;
    let b2: f64 = b.iter().map(|v| v * v).sum();
    let vw_sd = (config.market_sd.powi(2) + herfindahl * (b2 + config.noise_sd.powi(2))).sqrt();
    let noise_scale = config.noise_sd * (n - 1.0).sqrt() / n;

    let mut vw = Vec::with_capacity(2 * pairs);
    let mut tilt = Vec::with_capacity(2 * pairs * k);
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut mean = vec![0.0; k];
    let mut noise = vec![0.0; k];
    let mut z = vec![0.0; k];
    for _ in 0..pairs {
        for i in 0..k {
            l[(i, i)] = chi[i].sample(&mut rng).sqrt();
            for j in 0..i {
                l[(i, j)] = normal(&mut rng);
            }
        }
        let w = &l * l.transpose();
        for j in 0..k {
            let s_j = (w[(j, j)] / (n - 1.0)).sqrt();
            let sb: f64 = (0..k).map(|c| w[(j, c)] * b[c]).sum::<f64>() / (n - 1.0);
            mean[j] = (n - 1.0) / n * sb / s_j;
        }
        z.iter_mut().for_each(|v| *v = normal(&mut rng));
        // Cholesky factor of R is D^-1 L / sqrt(N - 1)
        for j in 0..k {
            let d = w[(j, j)].sqrt();
            noise[j] = noise_scale * (0..=j).map(|c| l[(j, c)] * z[c]).sum::<f64>() / d;
        }
        let market = config.market_mean + vw_sd * normal(&mut rng);
        for sign in [1.0, -1.0] {
            vw.push(market);
            tilt.extend(mean.iter().zip(&noise).map(|(m, e)| m + sign * e));
        }
    }
    (vw, tilt)
}

fn mean_utility(vw: &[f64], tilt: &[f64], theta: &[f64], gamma: f64) -> f64 {
    let k = theta.len();
    let expo = 1.0 - gamma;
    let mut sum = 0.0;
    for (t, m) in vw.iter().enumerate() {
        let gross = 1.0 + m + (0..k).map(|j| theta[j] * tilt[t * k + j]).sum::<f64>();
        if !(gross > 0.0) {
            return f64::NEG_INFINITY;
        }
        sum += gross.powf(expo);
    }
    sum / (expo * vw.len() as f64)
}

/// Maximizes a concave function of one variable by bracketing then golden section.
fn golden_max<F: Fn(f64) -> f64>(f: F, start: f64, tol: f64) -> f64 {
    let f0 = f(start);
    let mut step = 0.5 * start.abs().max(1.0);
    let dir = if f(start + 1e-4 * step) >= f0 { 1.0 } else { -1.0 };
    let (mut a, mut b) = (start - dir * 1e-4 * step, start);
    let mut fb = f0;
    loop {
        let c = b + dir * step;
        let fc = f(c);
        if !(fc > fb) {
            b = c;
            break;
        }
        a = b;
        b = c;
        fb = fc;
        step *= 2.0;
    }
    let (mut lo, mut hi) = if a < b { (a, b) } else { (b, a) };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol * lo.abs().max(hi.abs()).max(1.0) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

/// Population-optimal policy coefficients for the signal columns under the
/// DGP, by Monte Carlo and coordinate-wise golden-section search, with a
/// sandwich standard error over antithetic pairs.
pub fn oracle_theta(config: &DgpConfig, gamma_star: f64, opts: &OracleOptions) -> Result<OracleTheta, SynthError> {
    config.validate()?;
    if !(gamma_star > 1.0) {
        return Err(SynthError::InvalidConfig(format!("gamma* must exceed 1, got {gamma_star}")));
    }
    let b = config.canonical_loadings();
    let k = b.len();
    let (vw, tilt) = simulate_moments(config, &b, opts);
    let mut theta = vec![0.0; k];
    for _ in 0..opts.sweeps {
        let before = theta.clone();
        for j in 0..k {
            let f = |v: f64| {
                let mut t = theta.clone();
                t[j] = v;
                mean_utility(&vw, &tilt, &t, gamma_star)
            };
            theta[j] = golden_max(f, theta[j], opts.tolerance);
        }
        let moved = theta.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if moved < opts.tolerance * theta.iter().fold(1.0f64, |m, v| m.max(v.abs())) {
            break;
        }
    }

    let months = vw.len();
    let pairs = months / 2;
    let mut hess = DMatrix::<f64>::zeros(k, k);
    let mut scores = DMatrix::<f64>::zeros(pairs, k);
    for t in 0..months {
        let a = &tilt[t * k..(t + 1) * k];
        let gross = 1.0 + vw[t] + (0..k).map(|j| theta[j] * a[j]).sum::<f64>();
        let marg = gross.powf(-gamma_star);
        for i in 0..k {
            scores[(t / 2, i)] += 0.5 * marg * a[i];
            for j in 0..k {
                hess[(i, j)] -= gamma_star * marg / gross * a[i] * a[j] / months as f64;
            }
        }
    }
    let mean_score: DVector<f64> = scores.row_mean().transpose();
    let centered = DMatrix::from_fn(pairs, k, |p, j| scores[(p, j)] - mean_score[j]);
    let meat = centered.transpose() * &centered / (pairs as f64 - 1.0);
    let std_error = match hess.clone().try_inverse() {
        Some(inv) => {
            let cov = &inv * meat * &inv / pairs as f64;
            (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect()
        }
        None => vec![f64::NAN; k],
    };
    let objective = mean_utility(&vw, &tilt, &theta, gamma_star);
    Ok(OracleTheta { theta, std_error, objective })
}
