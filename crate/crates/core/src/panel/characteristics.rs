use std::collections::BTreeMap;

use super::{Characteristic, Exchange, PanelError, RawCharacteristics, RawStockMonth, StockId};
use crate::month::Month;

/// A stock that has enough history to be considered in month `month`.
///
/// `ret` is the return over `month` itself (possibly missing, to be filled by
/// the delisting rules); the characteristics use information through `month - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateObs {
    pub stock_id: StockId,
    pub month: Month,
    pub ret: Option<f64>,
    pub delist_ret: Option<f64>,
    pub exchange: Exchange,
    pub is_financial: bool,
    pub mktcap_prev: f64,
    pub chars: RawCharacteristics,
}

/// OLS of `y` on a constant and `x`: returns `(alpha, beta, residual sd)`.
///
/// The residual sd uses the `n - 2` divisor. `None` when `x` has no variation
/// or fewer than three observations are given.
pub fn market_model(y: &[f64], x: &[f64]) -> Option<(f64, f64, f64)> {
    let n = y.len();
    if n != x.len() || n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let beta = sxy / sxx;
    let alpha = my - beta * mx;
    let sse: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - alpha - beta * xi).powi(2)).sum();
    Some((alpha, beta, (sse / (nf - 2.0)).sqrt()))
}

/// Value-weighted return index computed from the history itself: month-`t`
/// returns weighted by month `t-1` capitalization. Months where no stock has
/// a prior capitalization (the first month) use equal weights.
pub fn value_weighted_index(history: &[RawStockMonth]) -> BTreeMap<Month, f64> {
    let mut caps: BTreeMap<(StockId, Month), f64> = BTreeMap::new();
    for r in history {
        caps.insert((r.stock_id, r.month), r.market_cap);
    }
    let mut vw: BTreeMap<Month, (f64, f64)> = BTreeMap::new();
    let mut ew: BTreeMap<Month, (f64, f64)> = BTreeMap::new();
    for r in history {
        let Some(ret) = r.ret else { continue };
        let e = ew.entry(r.month).or_insert((0.0, 0.0));
        e.0 += ret;
        e.1 += 1.0;
        if let Some(&cap) = caps.get(&(r.stock_id, r.month.offset(-1))) {
            let e = vw.entry(r.month).or_insert((0.0, 0.0));
            e.0 += cap * ret;
            e.1 += cap;
        }
    }
    ew.into_iter()
        .map(|(m, (sum, count))| match vw.get(&m) {
            Some(&(num, w)) if w > 0.0 => (m, num / w),
            _ => (m, sum / count),
        })
        .collect()
}

/// Computes raw characteristics for every stock-month with `history_months`
/// consecutive non-missing returns before it.
///
/// Conventions, for return month `t`:
/// - M: compounded return over `t-13..=t-2`;
/// - S: ln(market cap at `t-2`);
/// - V: ln(1 + book / cap at `t-2`), book from the latest fiscal year-end in `t-18..=t-6`;
/// - beta, sigma_eps: market model over `t-history_months..=t-1`;
/// - r_lag12: return at `t-12`; r_bar: mean of returns at `t-12, t-24, ...` within the history.
///
/// Stock-months without a positive book value are dropped when `require_book`
/// is set and otherwise carry `V = None`. Output is sorted by `(month, stock_id)`.
pub fn build_characteristics(
    history: &[RawStockMonth],
    market_index: &BTreeMap<Month, f64>,
    history_months: usize,
    require_book: bool,
) -> Result<Vec<CandidateObs>, PanelError> {
    if history_months < 24 {
        return Err(PanelError::InvalidFilter(format!(
            "history_months must be at least 24, got {history_months}"
        )));
    }
    let Some(last_month) = history.iter().map(|r| r.month).max() else {
        return Ok(Vec::new());
    };

    let mut by_stock: BTreeMap<StockId, Vec<&RawStockMonth>> = BTreeMap::new();
    for r in history {
        by_stock.entry(r.stock_id).or_default().push(r);
    }

    let h = history_months as i64;
    let mut out = Vec::new();
    let mut y = Vec::with_capacity(history_months);
    let mut x = Vec::with_capacity(history_months);
    for (stock_id, mut rows) in by_stock {
        rows.sort_by_key(|r| r.month);
        let first = rows[0].month;
        let span = rows.last().unwrap().month.months_since(first) as usize + 1;
        let mut dense: Vec<Option<&RawStockMonth>> = vec![None; span + 1];
        for r in &rows {
            dense[r.month.months_since(first) as usize] = Some(r);
        }
        // valid_prefix[i] = number of months < i with a recorded return
        let mut valid_prefix = vec![0usize; span + 2];
        for i in 0..=span {
            let ok = dense[i].is_some_and(|r| r.ret.is_some());
            valid_prefix[i + 1] = valid_prefix[i] + usize::from(ok);
        }
        let ret_at = |i: i64| dense[i as usize].and_then(|r| r.ret).unwrap();
        let row_at = |i: i64| dense[i as usize].unwrap();

        for ti in h..=(span as i64) {
            let month = first.offset(ti);
            if month > last_month {
                break;
            }
            if valid_prefix[ti as usize] - valid_prefix[(ti - h) as usize] != history_months {
                continue;
            }

            let prev = row_at(ti - 1);
            let size_row = row_at(ti - 2);
            let momentum = (ti - 13..=ti - 2).map(ret_at).fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0;
            let log_size = (size_row.market_cap > 0.0).then(|| size_row.market_cap.ln());

            let book = (6..=18)
                .filter(|lag| ti - lag >= 0)
                .find_map(|lag| dense[(ti - lag) as usize].and_then(|r| r.book_value));
            let book_to_market = match book {
                Some(b) if b > 0.0 && size_row.market_cap > 0.0 => {
                    Some((1.0 + b / size_row.market_cap).ln())
                }
                _ => None,
            };
            if require_book && book_to_market.is_none() {
                continue;
            }

            y.clear();
            x.clear();
            for i in ti - h..ti {
                let m = first.offset(i);
                y.push(ret_at(i));
                x.push(*market_index.get(&m).ok_or(PanelError::IndexGap(m))?);
            }
            let (beta, sigma) = match market_model(&y, &x) {
                Some((_, b, s)) => (Some(b), Some(s)),
                None => (None, None),
            };

            let lag12 = ret_at(ti - 12);
            let same_month: Vec<f64> = (1..=h / 12).map(|k| ret_at(ti - 12 * k)).collect();
            let same_month_mean = same_month.iter().sum::<f64>() / same_month.len() as f64;

            let mut chars: RawCharacteristics = [None; 7];
            chars[Characteristic::Momentum.index()] = Some(momentum);
            chars[Characteristic::BookToMarket.index()] = book_to_market;
            chars[Characteristic::LogSize.index()] = log_size;
            chars[Characteristic::Beta.index()] = beta;
            chars[Characteristic::LagTwelve.index()] = Some(lag12);
            chars[Characteristic::SameMonthMean.index()] = Some(same_month_mean);
            chars[Characteristic::ResidualVol.index()] = sigma;

            let current = dense.get(ti as usize).copied().flatten();
            out.push(CandidateObs {
                stock_id,
                month,
                ret: current.and_then(|r| r.ret),
                delist_ret: current.and_then(|r| r.delist_ret),
                exchange: current.map(|r| r.exchange).unwrap_or(prev.exchange),
                is_financial: prev.is_financial,
                mktcap_prev: prev.market_cap,
                chars,
            });
        }
    }
    out.sort_by_key(|c| (c.month, c.stock_id));
    Ok(out)
}
