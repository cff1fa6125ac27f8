//! Price/factor/news ingestion and panel alignment.
//!
//! The trading calendar is the sorted union of all dates observed in the
//! price file; no exchange-holiday logic beyond that.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::news_encoding::NewsFeatureVector;

/// One daily OHLCV bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub symbol: String,
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl PriceBar {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Validation(format!(
                    "{} {}: {name} must be positive and finite, got {v}",
                    self.symbol, self.date
                )));
            }
        }
        if self.volume < 0.0 || !self.volume.is_finite() {
            return Err(Error::Validation(format!(
                "{} {}: volume must be non-negative",
                self.symbol, self.date
            )));
        }
        if self.high < self.open.max(self.close) {
            return Err(Error::Validation(format!(
                "{} {}: high < max(open, close)",
                self.symbol, self.date
            )));
        }
        if self.low > self.open.min(self.close) {
            return Err(Error::Validation(format!(
                "{} {}: high < low or low > min(open, close)",
                self.symbol, self.date
            )));
        }
        Ok(())
    }
}

/// Per-(symbol, date) firm characteristics. Column names live on the
/// enclosing [`FactorTable`]; the first four are always
/// `mktcap, bp, op, inv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockFactorRow {
    pub symbol: String,
    pub date: NaiveDate,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    /// Factor column names (excluding `symbol` and `date`).
    pub columns: Vec<String>,
    pub rows: Vec<StockFactorRow>,
}

/// A raw news item before feature resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsRecord {
    pub symbol: String,
    pub date: NaiveDate,
    #[serde(default)]
    pub headline: Option<String>,
    #[serde(default)]
    pub embedding_id: Option<String>,
}

/// A news item whose feature vector has been resolved (from the
/// embeddings store or the fallback encoder).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedNews {
    pub symbol: String,
    pub date: NaiveDate,
    pub headline: Option<String>,
    pub features: NewsFeatureVector,
}

/// One aligned (symbol, date) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub symbol: String,
    pub date: NaiveDate,
    pub open: f64,
    pub close: f64,
    /// Simple return close_t / close_{t-1} - 1; absent on each symbol's
    /// first date.
    pub return_1d: Option<f64>,
    /// Next trading day's open; absent at the panel tail.
    pub open_next: Option<f64>,
    /// Factor values in `FactorTable::columns` order; absent when no
    /// factor row matched.
    pub factors: Option<Vec<f64>>,
    /// Missing news stays absent rather than zero-filled so consumers can
    /// choose zero-fill vs drop.
    pub news: Option<NewsFeatureVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPanel {
    pub calendar: Vec<NaiveDate>,
    pub factor_columns: Vec<String>,
    pub rows: Vec<PanelRow>,
    /// Factor rows dropped because no price bar matched.
    pub dropped_factor_rows: usize,
}

impl AlignedPanel {
    pub fn symbols(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.rows.iter().map(|r| r.symbol.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    /// Returns keyed by (symbol, date).
    pub fn returns_map(&self) -> BTreeMap<(String, NaiveDate), f64> {
        self.rows
            .iter()
            .filter_map(|r| r.return_1d.map(|v| ((r.symbol.clone(), r.date), v)))
            .collect()
    }
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| format!("bad date {s:?}: {e}"))
}

fn parse_num(s: &str, field: &str) -> std::result::Result<f64, String> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| format!("bad {field} {s:?}: {e}"))
}

/// Load and validate `prices.csv` (`symbol,date,open,high,low,close,volume`).
/// Output is sorted by (symbol, date).
pub fn load_prices(path: &Path) -> Result<Vec<PriceBar>> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: display.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| Error::Parse {
        path: display.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    let expected = ["symbol", "date", "open", "high", "low", "close", "volume"];
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: format!("expected header {expected:?}, got {got:?}"),
        });
    }

    let mut bars = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let parse = |r: std::result::Result<f64, String>| {
            r.map_err(|message| Error::Parse {
                path: display.clone(),
                line,
                message,
            })
        };
        let bar = PriceBar {
            symbol: field(0).trim().to_string(),
            date: parse_date(field(1)).map_err(|message| Error::Parse {
                path: display.clone(),
                line,
                message,
            })?,
            open: parse(parse_num(field(2), "open"))?,
            high: parse(parse_num(field(3), "high"))?,
            low: parse(parse_num(field(4), "low"))?,
            close: parse(parse_num(field(5), "close"))?,
            volume: parse(parse_num(field(6), "volume"))?,
        };
        bar.validate()?;
        bars.push(bar);
    }
    bars.sort_by(|a, b| (&a.symbol, a.date).cmp(&(&b.symbol, b.date)));
    Ok(bars)
}

/// Load `factors.csv` (`symbol,date,mktcap,bp,op,inv[,extra...]`).
pub fn load_factors(path: &Path) -> Result<FactorTable> {
    let display = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: display.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: display.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let required = ["symbol", "date", "mktcap", "bp", "op", "inv"];
    if headers.len() < required.len()
        || headers[..required.len()] != required.map(String::from)
    {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: format!("expected header to start with {required:?}, got {headers:?}"),
        });
    }
    let columns: Vec<String> = headers[2..].to_vec();

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            line,
            message: e.to_string(),
        })?;
        let symbol = record.get(0).unwrap_or("").trim().to_string();
        let date = parse_date(record.get(1).unwrap_or("")).map_err(|message| Error::Parse {
            path: display.clone(),
            line,
            message,
        })?;
        let mut values = Vec::with_capacity(columns.len());
        for (i, col) in columns.iter().enumerate() {
            values.push(
                parse_num(record.get(i + 2).unwrap_or(""), col).map_err(|message| {
                    Error::Parse {
                        path: display.clone(),
                        line,
                        message,
                    }
                })?,
            );
        }
        if values[0] <= 0.0 {
            return Err(Error::Validation(format!(
                "{symbol} {date}: mktcap must be positive, got {}",
                values[0]
            )));
        }
        rows.push(StockFactorRow {
            symbol,
            date,
            values,
        });
    }
    rows.sort_by(|a, b| (&a.symbol, a.date).cmp(&(&b.symbol, b.date)));
    Ok(FactorTable { columns, rows })
}

/// Load `news.jsonl`, one [`NewsRecord`] per line.
pub fn load_news(path: &Path) -> Result<Vec<NewsRecord>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NewsRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    records.sort_by(|a, b| (&a.symbol, a.date).cmp(&(&b.symbol, b.date)));
    Ok(records)
}

/// Which prices define the daily return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnBasis {
    #[default]
    CloseToClose,
    OpenToOpen,
}

/// Simple returns per (symbol, date). Symbols with a single bar are
/// skipped and reported in the second element.
pub fn compute_returns(
    bars: &[PriceBar],
) -> (BTreeMap<(String, NaiveDate), f64>, Vec<String>) {
    compute_returns_basis(bars, ReturnBasis::CloseToClose)
}

pub fn compute_returns_basis(
    bars: &[PriceBar],
    basis: ReturnBasis,
) -> (BTreeMap<(String, NaiveDate), f64>, Vec<String>) {
    let mut by_symbol: BTreeMap<&str, Vec<&PriceBar>> = BTreeMap::new();
    for bar in bars {
        by_symbol.entry(&bar.symbol).or_default().push(bar);
    }
    let mut returns = BTreeMap::new();
    let mut skipped = Vec::new();
    for (symbol, mut series) in by_symbol {
        series.sort_by_key(|b| b.date);
        if series.len() < 2 {
            log::warn!("symbol {symbol} has fewer than 2 bars; skipped");
            skipped.push(symbol.to_string());
            continue;
        }
        for pair in series.windows(2) {
            let (prev, cur) = (pair[0], pair[1]);
            let (p0, p1) = match basis {
                ReturnBasis::CloseToClose => (prev.close, cur.close),
                ReturnBasis::OpenToOpen => (prev.open, cur.open),
            };
            returns.insert((symbol.to_string(), cur.date), p1 / p0 - 1.0);
        }
    }
    (returns, skipped)
}

/// Join prices, factors, and resolved news onto the observed-date
/// calendar. One row per (symbol, date) with a price bar.
pub fn align_panel(
    prices: &[PriceBar],
    factors: &FactorTable,
    news: &[ResolvedNews],
) -> Result<AlignedPanel> {
    align_panel_basis(prices, factors, news, ReturnBasis::CloseToClose)
}

pub fn align_panel_basis(
    prices: &[PriceBar],
    factors: &FactorTable,
    news: &[ResolvedNews],
    basis: ReturnBasis,
) -> Result<AlignedPanel> {
    let calendar: Vec<NaiveDate> = prices
        .iter()
        .map(|b| b.date)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut bar_index: BTreeMap<(&str, NaiveDate), &PriceBar> = BTreeMap::new();
    for bar in prices {
        if bar_index.insert((&bar.symbol, bar.date), bar).is_some() {
            return Err(Error::Validation(format!(
                "duplicate price bar for {} {}",
                bar.symbol, bar.date
            )));
        }
    }

    let mut factor_index: BTreeMap<(&str, NaiveDate), &StockFactorRow> = BTreeMap::new();
    let mut dropped = 0usize;
    for row in &factors.rows {
        if bar_index.contains_key(&(row.symbol.as_str(), row.date)) {
            factor_index.insert((&row.symbol, row.date), row);
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} factor rows had no matching price bar and were dropped");
    }

    let mut news_index: BTreeMap<(&str, NaiveDate), &ResolvedNews> = BTreeMap::new();
    for item in news {
        news_index.insert((&item.symbol, item.date), item);
    }

    let (returns, _skipped) = compute_returns_basis(prices, basis);

    // Per-symbol sorted bars for open_next lookup.
    let mut by_symbol: BTreeMap<&str, Vec<&PriceBar>> = BTreeMap::new();
    for bar in prices {
        by_symbol.entry(&bar.symbol).or_default().push(bar);
    }

    let mut rows = Vec::new();
    for (symbol, mut series) in by_symbol {
        series.sort_by_key(|b| b.date);
        for (i, bar) in series.iter().enumerate() {
            let open_next = series.get(i + 1).map(|b| b.open);
            rows.push(PanelRow {
                symbol: symbol.to_string(),
                date: bar.date,
                open: bar.open,
                close: bar.close,
                return_1d: returns.get(&(symbol.to_string(), bar.date)).copied(),
                open_next,
                factors: factor_index
                    .get(&(symbol, bar.date))
                    .map(|r| r.values.clone()),
                news: news_index
                    .get(&(symbol, bar.date))
                    .map(|n| n.features.clone()),
            });
        }
    }
    rows.sort_by(|a, b| (&a.symbol, a.date).cmp(&(&b.symbol, b.date)));

    Ok(AlignedPanel {
        calendar,
        factor_columns: factors.columns.clone(),
        rows,
        dropped_factor_rows: dropped,
    })
}

/// Persist a panel as JSON. serde_json round-trips f64 exactly, so
/// save→load is bit-exact.
pub fn save_panel(panel: &AlignedPanel, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    serde_json::to_writer(&mut file, panel)
        .map_err(|e| Error::Numeric(format!("panel serialization failed: {e}")))?;
    file.write_all(b"\n")?;
    Ok(())
}

pub fn load_panel(path: &Path) -> Result<AlignedPanel> {
    let file = std::fs::File::open(path)?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}
