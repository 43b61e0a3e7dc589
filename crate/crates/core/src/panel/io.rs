use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use csv::StringRecord;

use super::{
    Characteristic, Exchange, PanelError, RawObs, RawPanel, RawSection, RawStockMonth, StockId,
};
use crate::month::Month;

pub const RAW_HISTORY_HEADER: &str =
    "month,stock_id,ret,mktcap,book_value,is_financial,exchange,delisted,delist_ret";

pub const PANEL_HEADER: &str =
    "month,stock_id,ret,mktcap_prev,is_financial,M,V,S,beta,r_lag12,r_bar,sigma_eps";

/// Column names used when reading a raw-history file.
///
/// `month`, `stock_id`, `ret` and `mktcap` are required; the rest fall back
/// to defaults (no book value, non-financial, `OTHER`, not delisted) when the
/// column is absent.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RawSchema {
    pub month: String,
    pub stock_id: String,
    pub ret: String,
    pub mktcap: String,
    pub book_value: String,
    pub is_financial: String,
    pub exchange: String,
    pub delisted: String,
    pub delist_ret: String,
}

impl Default for RawSchema {
    fn default() -> Self {
        Self {
            month: "month".into(),
            stock_id: "stock_id".into(),
            ret: "ret".into(),
            mktcap: "mktcap".into(),
            book_value: "book_value".into(),
            is_financial: "is_financial".into(),
            exchange: "exchange".into(),
            delisted: "delisted".into(),
            delist_ret: "delist_ret".into(),
        }
    }
}

fn malformed(line: u64, message: impl Into<String>) -> PanelError {
    PanelError::Malformed { line, message: message.into() }
}

fn csv_error(e: csv::Error) -> PanelError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    malformed(line, e.to_string())
}

struct Columns<'a> {
    header: &'a StringRecord,
}

impl Columns<'_> {
    fn required(&self, name: &str) -> Result<usize, PanelError> {
        self.optional(name).ok_or_else(|| malformed(1, format!("missing column `{name}`")))
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h.trim() == name)
    }
}

fn field<'r>(rec: &'r StringRecord, idx: usize) -> &'r str {
    rec.get(idx).unwrap_or("").trim()
}

fn parse_f64(rec: &StringRecord, idx: usize, line: u64, name: &str) -> Result<Option<f64>, PanelError> {
    let s = field(rec, idx);
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| malformed(line, format!("`{name}`: cannot parse `{s}` as a number")))
}

fn parse_month(rec: &StringRecord, idx: usize, line: u64) -> Result<Month, PanelError> {
    let s = field(rec, idx);
    s.parse::<u32>()
        .ok()
        .and_then(Month::from_yyyymm)
        .ok_or_else(|| malformed(line, format!("`month`: `{s}` is not a YYYYMM month")))
}

fn parse_id(rec: &StringRecord, idx: usize, line: u64) -> Result<StockId, PanelError> {
    let s = field(rec, idx);
    s.parse::<u64>()
        .map(StockId)
        .map_err(|_| malformed(line, format!("`stock_id`: `{s}` is not an integer id")))
}

fn parse_bool(rec: &StringRecord, idx: Option<usize>, line: u64, name: &str) -> Result<bool, PanelError> {
    let Some(idx) = idx else { return Ok(false) };
    match field(rec, idx).to_ascii_lowercase().as_str() {
        "" | "0" | "false" | "f" | "n" | "no" => Ok(false),
        "1" | "true" | "t" | "y" | "yes" => Ok(true),
        other => Err(malformed(line, format!("`{name}`: `{other}` is not a boolean"))),
    }
}

fn line_of(rec: &StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads raw stock-month history. Duplicate `(stock_id, month)` pairs are rejected.
pub fn load_raw<R: Read>(source: R, schema: &RawSchema) -> Result<Vec<RawStockMonth>, PanelError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = reader.headers().map_err(csv_error)?.clone();
    let cols = Columns { header: &header };
    let i_month = cols.required(&schema.month)?;
    let i_id = cols.required(&schema.stock_id)?;
    let i_ret = cols.required(&schema.ret)?;
    let i_cap = cols.required(&schema.mktcap)?;
    let i_book = cols.optional(&schema.book_value);
    let i_fin = cols.optional(&schema.is_financial);
    let i_exch = cols.optional(&schema.exchange);
    let i_delisted = cols.optional(&schema.delisted);
    let i_dlret = cols.optional(&schema.delist_ret);

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec);
        let month = parse_month(&rec, i_month, line)?;
        let stock_id = parse_id(&rec, i_id, line)?;
        if !seen.insert((stock_id, month)) {
            return Err(PanelError::DuplicateKey { stock_id, month });
        }
        let market_cap = parse_f64(&rec, i_cap, line, "mktcap")?
            .ok_or_else(|| malformed(line, "`mktcap` is empty"))?;
        if !(market_cap >= 0.0) {
            return Err(malformed(line, "`mktcap` must be non-negative"));
        }
        let ret = parse_f64(&rec, i_ret, line, "ret")?;
        let book_value = match i_book {
            Some(i) => parse_f64(&rec, i, line, "book_value")?,
            None => None,
        };
        let delist_ret = match i_dlret {
            Some(i) => parse_f64(&rec, i, line, "delist_ret")?,
            None => None,
        };
        out.push(RawStockMonth {
            stock_id,
            month,
            ret,
            market_cap,
            book_value,
            is_financial: parse_bool(&rec, i_fin, line, "is_financial")?,
            exchange: i_exch.map(|i| Exchange::parse(field(&rec, i))).unwrap_or(Exchange::Other),
            delisted: parse_bool(&rec, i_delisted, line, "delisted")?,
            delist_ret,
        });
    }
    Ok(out)
}

fn read_month_series<R: Read>(
    source: R,
    value_column: &str,
) -> Result<BTreeMap<Month, f64>, PanelError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = reader.headers().map_err(csv_error)?.clone();
    let cols = Columns { header: &header };
    let i_month = cols.required("month")?;
    let i_val = cols.required(value_column)?;
    let mut out = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec);
        let month = parse_month(&rec, i_month, line)?;
        let v = parse_f64(&rec, i_val, line, value_column)?
            .ok_or_else(|| malformed(line, format!("`{value_column}` is empty")))?;
        if out.insert(month, v).is_some() {
            return Err(malformed(line, format!("duplicate month {month}")));
        }
    }
    Ok(out)
}

/// Reads a deflator file with columns `month,index`.
pub fn read_deflator<R: Read>(source: R) -> Result<super::Deflator, PanelError> {
    read_month_series(source, "index").map(super::Deflator::new)
}

/// Reads a risk-free rate file with columns `month,rf` (fractions).
pub fn read_risk_free<R: Read>(source: R) -> Result<BTreeMap<Month, f64>, PanelError> {
    read_month_series(source, "rf")
}

/// Reads a market index return file with columns `month,ret`.
pub fn read_market_index<R: Read>(source: R) -> Result<BTreeMap<Month, f64>, PanelError> {
    read_month_series(source, "ret")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes raw history in `RAW_HISTORY_HEADER` layout, rows in the given order.
///
/// Floats use shortest round-trip formatting so that load-then-write is byte-stable.
pub fn write_raw_history<W: Write>(rows: &[RawStockMonth], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RAW_HISTORY_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.month,
            r.stock_id,
            fmt_opt(r.ret),
            r.market_cap,
            fmt_opt(r.book_value),
            u8::from(r.is_financial),
            r.exchange.as_str(),
            u8::from(r.delisted),
            fmt_opt(r.delist_ret),
        )?;
    }
    out.flush()
}

/// Writes a filtered raw panel in `PANEL_HEADER` layout.
pub fn write_panel_csv<W: Write>(panel: &RawPanel, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{PANEL_HEADER}")?;
    for section in &panel.sections {
        for row in &section.rows {
            write!(
                out,
                "{},{},{},{},{}",
                section.month,
                row.stock_id,
                row.ret,
                row.mktcap_prev,
                u8::from(row.is_financial)
            )?;
            for c in Characteristic::ALL {
                write!(out, ",{}", fmt_opt(row.chars[c.index()]))?;
            }
            writeln!(out)?;
        }
    }
    out.flush()
}

/// Reads a prebuilt panel. Rows are grouped by month (sorted); file order is kept within a month.
pub fn read_panel_csv<R: Read>(source: R) -> Result<RawPanel, PanelError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = reader.headers().map_err(csv_error)?.clone();
    let cols = Columns { header: &header };
    let i_month = cols.required("month")?;
    let i_id = cols.required("stock_id")?;
    let i_ret = cols.required("ret")?;
    let i_cap = cols.required("mktcap_prev")?;
    let i_fin = cols.optional("is_financial");
    let i_chars: Vec<Option<usize>> =
        Characteristic::ALL.iter().map(|c| cols.optional(c.name())).collect();

    let mut seen = HashSet::new();
    let mut by_month: BTreeMap<Month, Vec<RawObs>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = line_of(&rec);
        let month = parse_month(&rec, i_month, line)?;
        let stock_id = parse_id(&rec, i_id, line)?;
        if !seen.insert((stock_id, month)) {
            return Err(PanelError::DuplicateKey { stock_id, month });
        }
        let ret = parse_f64(&rec, i_ret, line, "ret")?
            .ok_or_else(|| malformed(line, "`ret` is empty"))?;
        let mktcap_prev = parse_f64(&rec, i_cap, line, "mktcap_prev")?
            .ok_or_else(|| malformed(line, "`mktcap_prev` is empty"))?;
        if !(mktcap_prev >= 0.0) {
            return Err(malformed(line, "`mktcap_prev` must be non-negative"));
        }
        let mut chars = [None; 7];
        for (slot, (c, idx)) in chars.iter_mut().zip(Characteristic::ALL.iter().zip(&i_chars)) {
            if let Some(i) = idx {
                *slot = parse_f64(&rec, *i, line, c.name())?;
            }
        }
        by_month.entry(month).or_default().push(RawObs {
            stock_id,
            ret,
            mktcap_prev,
            is_financial: parse_bool(&rec, i_fin, line, "is_financial")?,
            chars,
        });
    }
    Ok(RawPanel {
        sections: by_month.into_iter().map(|(month, rows)| RawSection { month, rows }).collect(),
    })
}
