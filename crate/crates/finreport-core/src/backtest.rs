//! One-day-hold backtest: buy the planned basket at the open, sell at
//! the next open, multiplicative transaction cost on both legs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::AlignedPanel;

/// Symbols to hold (equal-weighted) on one date. An empty set is a cash
/// day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradePlan {
    pub date: NaiveDate,
    pub symbols: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub date: NaiveDate,
    pub symbol: String,
    pub buy_open: f64,
    pub sell_open: f64,
    pub net_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub dates: Vec<NaiveDate>,
    /// Starts from 1.0 after the first day's return.
    pub equity: Vec<f64>,
    pub daily_returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestOutcome {
    pub curve: EquityCurve,
    pub ledger: Vec<LedgerEntry>,
    /// Planned positions skipped for lack of a next open, e.g.
    /// suspensions.
    pub skipped: Vec<(NaiveDate, String)>,
}

/// Net single-position return with cost `c` per leg:
/// (sell * (1-c)) / (buy * (1+c)) - 1.
pub fn position_return(buy_open: f64, sell_open: f64, cost: f64) -> f64 {
    (sell_open * (1.0 - cost)) / (buy_open * (1.0 + cost)) - 1.0
}

/// Execute the plans over the panel. Positions are equal-weighted per
/// day; a symbol missing its next open is skipped and the weight
/// redistributed over the rest.
pub fn run_backtest(
    panel: &AlignedPanel,
    plans: &[TradePlan],
    cost: f64,
) -> Result<BacktestOutcome> {
    if !(0.0..1.0).contains(&cost) {
        return Err(Error::Validation(format!(
            "transaction cost must lie in [0, 1), got {cost}"
        )));
    }
    let mut opens: BTreeMap<(&str, NaiveDate), (f64, Option<f64>)> = BTreeMap::new();
    for row in &panel.rows {
        opens.insert((&row.symbol, row.date), (row.open, row.open_next));
    }
    let plan_by_date: BTreeMap<NaiveDate, &TradePlan> =
        plans.iter().map(|p| (p.date, p)).collect();

    let mut curve = EquityCurve {
        dates: Vec::new(),
        equity: Vec::new(),
        daily_returns: Vec::new(),
    };
    let mut ledger = Vec::new();
    let mut skipped = Vec::new();
    let mut equity = 1.0;

    for date in &panel.calendar {
        let mut day_returns = Vec::new();
        if let Some(plan) = plan_by_date.get(date) {
            for symbol in &plan.symbols {
                match opens.get(&(symbol.as_str(), *date)) {
                    Some((buy, Some(sell))) => {
                        let net = position_return(*buy, *sell, cost);
                        ledger.push(LedgerEntry {
                            date: *date,
                            symbol: symbol.clone(),
                            buy_open: *buy,
                            sell_open: *sell,
                            net_return: net,
                        });
                        day_returns.push(net);
                    }
                    _ => {
                        log::warn!("{date} {symbol}: no next open; position skipped");
                        skipped.push((*date, symbol.clone()));
                    }
                }
            }
        }
        let daily = if day_returns.is_empty() {
            0.0
        } else {
            day_returns.iter().sum::<f64>() / day_returns.len() as f64
        };
        equity *= 1.0 + daily;
        if equity <= 0.0 {
            return Err(Error::Numeric(format!("equity wiped out on {date}")));
        }
        curve.dates.push(*date);
        curve.equity.push(equity);
        curve.daily_returns.push(daily);
    }

    Ok(BacktestOutcome {
        curve,
        ledger,
        skipped,
    })
}

/// min over t of equity_t / running_max_t - 1; always <= 0.
pub fn max_drawdown(curve: &EquityCurve) -> Result<f64> {
    if curve.equity.is_empty() {
        return Err(Error::Validation("empty equity curve".into()));
    }
    let mut peak = f64::MIN;
    let mut worst: f64 = 0.0;
    for &e in &curve.equity {
        peak = peak.max(e);
        worst = worst.min(e / peak - 1.0);
    }
    Ok(worst)
}

/// (equity_end / equity_start)^(days_per_year / T) - 1, where
/// equity_start is the initial 1.0 and T the number of daily returns.
pub fn annualized_return(curve: &EquityCurve, trading_days_per_year: f64) -> Result<f64> {
    let t = curve.daily_returns.len();
    if t < 2 {
        return Err(Error::Validation("curve must span at least 2 days".into()));
    }
    // Recover the pre-first-return equity so the metric is invariant
    // under scaling of the whole curve.
    let start = curve.equity[0] / (1.0 + curve.daily_returns[0]);
    let end = *curve.equity.last().unwrap();
    Ok((end / start).powf(trading_days_per_year / t as f64) - 1.0)
}

/// Annualized Sharpe ratio of daily excess returns (sample std,
/// divisor T-1). Zero variance is an error.
pub fn sharpe_ratio(
    curve: &EquityCurve,
    risk_free_daily: f64,
    trading_days_per_year: f64,
) -> Result<f64> {
    let n = curve.daily_returns.len();
    if n < 2 {
        return Err(Error::Validation("need at least 2 daily returns".into()));
    }
    let excess: Vec<f64> = curve
        .daily_returns
        .iter()
        .map(|r| r - risk_free_daily)
        .collect();
    let mean = excess.iter().sum::<f64>() / n as f64;
    let var = excess.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::Validation(
            "undefined Sharpe: returns have zero variance".into(),
        ));
    }
    Ok(mean / var.sqrt() * trading_days_per_year.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestMetrics {
    pub annualized_return: f64,
    pub max_drawdown: f64,
    pub sharpe_ratio: f64,
}

pub fn compute_metrics(curve: &EquityCurve) -> Result<BacktestMetrics> {
    Ok(BacktestMetrics {
        annualized_return: annualized_return(curve, 252.0)?,
        max_drawdown: max_drawdown(curve)?,
        sharpe_ratio: sharpe_ratio(curve, 0.0, 252.0)?,
    })
}

/// `date,symbol,buy_open,sell_open,net_return`
pub fn write_ledger_csv(ledger: &[LedgerEntry], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "date,symbol,buy_open,sell_open,net_return")?;
    for entry in ledger {
        writeln!(
            file,
            "{},{},{},{},{}",
            entry.date, entry.symbol, entry.buy_open, entry.sell_open, entry.net_return
        )?;
    }
    Ok(())
}

/// `date,equity,daily_return`
pub fn write_curve_csv(curve: &EquityCurve, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "date,equity,daily_return")?;
    for i in 0..curve.dates.len() {
        writeln!(
            file,
            "{},{},{}",
            curve.dates[i], curve.equity[i], curve.daily_returns[i]
        )?;
    }
    Ok(())
}
