//! Daily portfolio sorts, FF5 / FF5-News factor return construction,
//! per-asset time-series OLS, and the Gibbons-Ross-Shanken joint alpha
//! test.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::classifier::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeGroup {
    Small,
    Big,
}

/// Three-way split along one characteristic. `High` is the top 30% by
/// value; what that means economically depends on the dimension
/// (robust profitability is high `op`, conservative investment is low
/// `inv`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tertile {
    Low,
    Mid,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NewsGroup {
    Positive,
    Medium,
    Negative,
}

impl From<Label> for NewsGroup {
    fn from(label: Label) -> Self {
        match label {
            Label::Positive => NewsGroup::Positive,
            Label::Neutral => NewsGroup::Medium,
            Label::Negative => NewsGroup::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub size: SizeGroup,
    pub bp: Tertile,
    pub profitability: Tertile,
    pub investment: Tertile,
    /// Present only in FF5-News sorts. Stocks with no news that day are
    /// graded Medium.
    pub news: Option<NewsGroup>,
}

/// One stock's sortable characteristics on one date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmCharacteristics {
    pub symbol: String,
    pub mktcap: f64,
    pub bp: f64,
    pub profitability: f64,
    pub investment: f64,
}

/// Linear-interpolated empirical percentile (p in [0,1]).
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn tertile_split(values: &[f64], dimension: &str) -> Vec<Tertile> {
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        log::warn!("all {dimension} values equal; entire dimension assigned the middle group");
        return vec![Tertile::Mid; values.len()];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p30 = percentile(&sorted, 0.3);
    let p70 = percentile(&sorted, 0.7);
    values
        .iter()
        .map(|v| {
            if *v <= p30 {
                Tertile::Low
            } else if *v >= p70 {
                Tertile::High
            } else {
                Tertile::Mid
            }
        })
        .collect()
}

/// Assign size (median split), BP / profitability / investment
/// (30th/70th percentile splits), and optionally news groups from
/// classifier labels, for one date's cross-section.
pub fn sort_groups(
    cross_section: &[FirmCharacteristics],
    news_labels: Option<&BTreeMap<String, Label>>,
) -> Result<BTreeMap<String, GroupAssignment>> {
    if cross_section.len() < 6 {
        return Err(Error::Validation(format!(
            "cross-section has {} stocks; at least 6 are required for sorts",
            cross_section.len()
        )));
    }
    let mut caps: Vec<f64> = cross_section.iter().map(|c| c.mktcap).collect();
    let cap_median = median(&mut caps);
    let all_caps_equal = cross_section
        .iter()
        .all(|c| c.mktcap == cross_section[0].mktcap);
    if all_caps_equal {
        log::warn!("all market caps equal; every stock assigned Small");
    }

    let bp: Vec<f64> = cross_section.iter().map(|c| c.bp).collect();
    let op: Vec<f64> = cross_section.iter().map(|c| c.profitability).collect();
    let inv: Vec<f64> = cross_section.iter().map(|c| c.investment).collect();
    let bp_groups = tertile_split(&bp, "bp");
    let op_groups = tertile_split(&op, "profitability");
    let inv_groups = tertile_split(&inv, "investment");

    let mut out = BTreeMap::new();
    for (i, firm) in cross_section.iter().enumerate() {
        let news = news_labels.map(|labels| {
            labels
                .get(&firm.symbol)
                .map(|l| NewsGroup::from(*l))
                .unwrap_or(NewsGroup::Medium)
        });
        out.insert(
            firm.symbol.clone(),
            GroupAssignment {
                size: if firm.mktcap <= cap_median {
                    SizeGroup::Small
                } else {
                    SizeGroup::Big
                },
                bp: bp_groups[i],
                profitability: op_groups[i],
                investment: inv_groups[i],
                news,
            },
        );
    }
    Ok(out)
}

/// Per-date factor returns. `news` is present only for FF5-News.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReturnsSeries {
    pub dates: Vec<NaiveDate>,
    pub mkt_excess: Vec<f64>,
    pub smb: Vec<f64>,
    pub hml: Vec<f64>,
    pub rmw: Vec<f64>,
    pub cma: Vec<f64>,
    pub news: Option<Vec<f64>>,
    pub risk_free: Vec<f64>,
}

impl FactorReturnsSeries {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn factor_names(&self) -> Vec<&'static str> {
        let mut names = vec!["mkt_excess", "smb", "hml", "rmw", "cma"];
        if self.news.is_some() {
            names.push("news");
        }
        names
    }

    pub fn num_factors(&self) -> usize {
        5 + usize::from(self.news.is_some())
    }

    /// T x K factor matrix in `factor_names` column order.
    pub fn matrix(&self) -> DMatrix<f64> {
        let t = self.len();
        let k = self.num_factors();
        let mut m = DMatrix::zeros(t, k);
        for i in 0..t {
            m[(i, 0)] = self.mkt_excess[i];
            m[(i, 1)] = self.smb[i];
            m[(i, 2)] = self.hml[i];
            m[(i, 3)] = self.rmw[i];
            m[(i, 4)] = self.cma[i];
            if let Some(news) = &self.news {
                m[(i, 5)] = news[i];
            }
        }
        m
    }

    /// Values at one date, in `factor_names` order.
    pub fn at_date(&self, date: NaiveDate) -> Option<Vec<f64>> {
        let i = self.dates.iter().position(|d| *d == date)?;
        let mut row = vec![
            self.mkt_excess[i],
            self.smb[i],
            self.hml[i],
            self.rmw[i],
            self.cma[i],
        ];
        if let Some(news) = &self.news {
            row.push(news[i]);
        }
        Some(row)
    }

    /// `date,mkt_excess,smb,hml,rmw,cma[,news],rf`
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        let header = if self.news.is_some() {
            "date,mkt_excess,smb,hml,rmw,cma,news,rf"
        } else {
            "date,mkt_excess,smb,hml,rmw,cma,rf"
        };
        writeln!(file, "{header}")?;
        for i in 0..self.len() {
            let mut fields = vec![
                self.dates[i].to_string(),
                self.mkt_excess[i].to_string(),
                self.smb[i].to_string(),
                self.hml[i].to_string(),
                self.rmw[i].to_string(),
                self.cma[i].to_string(),
            ];
            if let Some(news) = &self.news {
                fields.push(news[i].to_string());
            }
            fields.push(self.risk_free[i].to_string());
            writeln!(file, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// One date's inputs to factor construction: realized returns and group
/// assignments for the stocks present that day.
#[derive(Debug, Clone)]
pub struct DailyCrossSection {
    pub date: NaiveDate,
    pub returns: BTreeMap<String, f64>,
    pub groups: BTreeMap<String, GroupAssignment>,
}

#[derive(Clone, Copy)]
enum SortDim {
    Bp,
    Profitability,
    Investment,
    News,
}

fn in_cell(group: &GroupAssignment, size: SizeGroup, dim: SortDim, level: usize) -> bool {
    if group.size != size {
        return false;
    }
    // level: 0 = the "high-return-named" leg (H/R/C/P), 1 = middle, 2 = opposite.
    match dim {
        SortDim::Bp => {
            group.bp
                == match level {
                    0 => Tertile::High,
                    1 => Tertile::Mid,
                    _ => Tertile::Low,
                }
        }
        SortDim::Profitability => {
            group.profitability
                == match level {
                    0 => Tertile::High,
                    1 => Tertile::Mid,
                    _ => Tertile::Low,
                }
        }
        // Conservative = low investment.
        SortDim::Investment => {
            group.investment
                == match level {
                    0 => Tertile::Low,
                    1 => Tertile::Mid,
                    _ => Tertile::High,
                }
        }
        SortDim::News => {
            group.news
                == Some(match level {
                    0 => NewsGroup::Positive,
                    1 => NewsGroup::Medium,
                    _ => NewsGroup::Negative,
                })
        }
    }
}

/// Equal-weighted mean returns of the 2x3 size-by-dimension portfolios,
/// as [[S0,S1,S2],[B0,B1,B2]]. Empty cells are imputed with the mean of
/// non-empty cells in the same size row (or of all non-empty cells when
/// a whole row is empty), with a warning.
fn six_portfolios(day: &DailyCrossSection, dim: SortDim, dim_name: &str) -> Result<[[f64; 3]; 2]> {
    let mut sums = [[0.0f64; 3]; 2];
    let mut counts = [[0usize; 3]; 2];
    for (symbol, ret) in &day.returns {
        let Some(group) = day.groups.get(symbol) else {
            continue;
        };
        for (s, size) in [SizeGroup::Small, SizeGroup::Big].into_iter().enumerate() {
            for level in 0..3 {
                if in_cell(group, size, dim, level) {
                    sums[s][level] += ret;
                    counts[s][level] += 1;
                }
            }
        }
    }
    let mut cells = [[f64::NAN; 3]; 2];
    for s in 0..2 {
        for l in 0..3 {
            if counts[s][l] > 0 {
                cells[s][l] = sums[s][l] / counts[s][l] as f64;
            }
        }
    }
    let filled: Vec<f64> = cells
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    if filled.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no stocks in any {dim_name} portfolio",
            day.date
        )));
    }
    let global_mean = filled.iter().sum::<f64>() / filled.len() as f64;
    for s in 0..2 {
        let row: Vec<f64> = cells[s].iter().copied().filter(|v| v.is_finite()).collect();
        let row_mean = if row.is_empty() {
            global_mean
        } else {
            row.iter().sum::<f64>() / row.len() as f64
        };
        for l in 0..3 {
            if !cells[s][l].is_finite() {
                log::warn!(
                    "{} {dim_name}: empty portfolio (size {s}, level {l}) imputed as sibling mean",
                    day.date
                );
                cells[s][l] = row_mean;
            }
        }
    }
    Ok(cells)
}

fn market_return(day: &DailyCrossSection) -> f64 {
    day.returns.values().sum::<f64>() / day.returns.len() as f64
}

struct DayFactors {
    mkt_excess: f64,
    smb: f64,
    hml: f64,
    rmw: f64,
    cma: f64,
    news: Option<f64>,
}

fn day_factors(day: &DailyCrossSection, with_news: bool, rf: f64) -> Result<DayFactors> {
    let bp = six_portfolios(day, SortDim::Bp, "bp")?;
    let op = six_portfolios(day, SortDim::Profitability, "profitability")?;
    let inv = six_portfolios(day, SortDim::Investment, "investment")?;

    let row_mean = |row: &[f64; 3]| (row[0] + row[1] + row[2]) / 3.0;
    let smb_component = |cells: &[[f64; 3]; 2]| row_mean(&cells[0]) - row_mean(&cells[1]);

    let smb_bp = smb_component(&bp);
    let smb_op = smb_component(&op);
    let smb_inv = smb_component(&inv);

    // Level 0 of each dimension is its "long" leg: H, R, C, P.
    let hml = (bp[1][0] + bp[0][0]) / 2.0 - (bp[1][2] + bp[0][2]) / 2.0;
    let rmw = (op[1][0] + op[0][0]) / 2.0 - (op[1][2] + op[0][2]) / 2.0;
    let cma = (inv[1][0] + inv[0][0]) / 2.0 - (inv[1][2] + inv[0][2]) / 2.0;

    let (smb, news) = if with_news {
        let news_cells = six_portfolios(day, SortDim::News, "news")?;
        let smb_news = smb_component(&news_cells);
        let news_factor =
            (news_cells[1][0] + news_cells[0][0]) / 2.0 - (news_cells[1][2] + news_cells[0][2]) / 2.0;
        (
            (smb_bp + smb_op + smb_inv + smb_news) / 4.0,
            Some(news_factor),
        )
    } else {
        ((smb_bp + smb_op + smb_inv) / 3.0, None)
    };

    Ok(DayFactors {
        mkt_excess: market_return(day) - rf,
        smb,
        hml,
        rmw,
        cma,
        news,
    })
}

fn build_series(
    days: &[DailyCrossSection],
    risk_free: &BTreeMap<NaiveDate, f64>,
    with_news: bool,
) -> Result<FactorReturnsSeries> {
    let mut series = FactorReturnsSeries {
        dates: Vec::new(),
        mkt_excess: Vec::new(),
        smb: Vec::new(),
        hml: Vec::new(),
        rmw: Vec::new(),
        cma: Vec::new(),
        news: with_news.then(Vec::new),
        risk_free: Vec::new(),
    };
    for day in days {
        if day.returns.is_empty() {
            continue;
        }
        let rf = risk_free.get(&day.date).copied().unwrap_or(0.0);
        let f = day_factors(day, with_news, rf)?;
        series.dates.push(day.date);
        series.mkt_excess.push(f.mkt_excess);
        series.smb.push(f.smb);
        series.hml.push(f.hml);
        series.rmw.push(f.rmw);
        series.cma.push(f.cma);
        if let (Some(col), Some(v)) = (&mut series.news, f.news) {
            col.push(v);
        }
        series.risk_free.push(rf);
    }
    for w in series.dates.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Validation("factor dates must be strictly increasing".into()));
        }
    }
    Ok(series)
}

/// FF5 factor returns from daily sorted cross-sections. The market
/// return is the equal-weighted mean of all stocks present that day.
pub fn factor_returns_ff5(
    days: &[DailyCrossSection],
    risk_free: &BTreeMap<NaiveDate, f64>,
) -> Result<FactorReturnsSeries> {
    build_series(days, risk_free, false)
}

/// FF5-News: SMB averages four components and the News long-short
/// factor is appended.
pub fn factor_returns_ff5news(
    days: &[DailyCrossSection],
    risk_free: &BTreeMap<NaiveDate, f64>,
) -> Result<FactorReturnsSeries> {
    build_series(days, risk_free, true)
}

/// Per-asset time-series OLS result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub symbol: String,
    pub alpha: f64,
    /// In `FactorReturnsSeries::factor_names` order.
    pub loadings: Vec<f64>,
    pub factor_names: Vec<String>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

fn find_collinear_columns(x: &DMatrix<f64>, names: &[String]) -> String {
    let k = x.ncols();
    let mut flagged = Vec::new();
    for j in 0..k {
        let col = x.column(j);
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        if var < 1e-24 {
            flagged.push(format!("{} (constant)", names[j]));
        }
    }
    for a in 0..k {
        for b in (a + 1)..k {
            let ca = x.column(a);
            let cb = x.column(b);
            let (ma, mb) = (ca.mean(), cb.mean());
            let mut cov = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for i in 0..x.nrows() {
                cov += (ca[i] - ma) * (cb[i] - mb);
                va += (ca[i] - ma).powi(2);
                vb += (cb[i] - mb).powi(2);
            }
            if va > 0.0 && vb > 0.0 && (cov / (va.sqrt() * vb.sqrt())).abs() > 1.0 - 1e-10 {
                flagged.push(format!("{} ~ {}", names[a], names[b]));
            }
        }
    }
    if flagged.is_empty() {
        "design matrix is rank deficient".to_string()
    } else {
        format!("collinear columns: {}", flagged.join(", "))
    }
}

/// OLS of one asset's excess returns on the factor series, with
/// intercept. Errors on rank-deficient designs, naming the collinear
/// columns where detectable.
pub fn ols_regress(
    symbol: &str,
    excess_returns: &[f64],
    factors: &FactorReturnsSeries,
) -> Result<RegressionResult> {
    let t = excess_returns.len();
    let k = factors.num_factors();
    if t != factors.len() {
        return Err(Error::Dimension(format!(
            "{symbol}: {t} returns vs {} factor dates",
            factors.len()
        )));
    }
    if t <= k + 1 {
        return Err(Error::Validation(format!(
            "{symbol}: need more than {} observations, got {t}",
            k + 1
        )));
    }
    let f = factors.matrix();
    let mut x = DMatrix::zeros(t, k + 1);
    for i in 0..t {
        x[(i, 0)] = 1.0;
        for j in 0..k {
            x[(i, j + 1)] = f[(i, j)];
        }
    }
    let y = DVector::from_column_slice(excess_returns);

    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = max_sv * (t.max(k + 1) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < k + 1 {
        let names: Vec<String> = std::iter::once("intercept".to_string())
            .chain(factors.factor_names().iter().map(|s| s.to_string()))
            .collect();
        return Err(Error::Validation(format!(
            "{symbol}: {}",
            find_collinear_columns(&x, &names)
        )));
    }
    let beta = svd
        .solve(&y, tol)
        .map_err(|e| Error::Numeric(format!("{symbol}: OLS solve failed: {e}")))?;

    let fitted = &x * &beta;
    let residuals: Vec<f64> = (&y - &fitted).iter().copied().collect();
    let y_mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };

    Ok(RegressionResult {
        symbol: symbol.to_string(),
        alpha: beta[0],
        loadings: beta.iter().skip(1).copied().collect(),
        factor_names: factors.factor_names().iter().map(|s| s.to_string()).collect(),
        residuals,
        r_squared,
    })
}

/// GRS joint test that all alphas are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub mean_abs_alpha: f64,
    pub t: usize,
    pub n: usize,
    pub k: usize,
}

/// GRS = (T-N-K)/N * (alpha' Sigma^-1 alpha) / (1 + mu' Omega^-1 mu),
/// with MLE (divisor T) covariances and the exact F(N, T-N-K) p-value.
pub fn grs_test(results: &[RegressionResult], factors: &FactorReturnsSeries) -> Result<GrsResult> {
    let n = results.len();
    if n == 0 {
        return Err(Error::Validation("no regression results supplied".into()));
    }
    let t = factors.len();
    let k = factors.num_factors();
    if t <= n + k {
        return Err(Error::Validation(format!(
            "GRS requires T > N + K; got T={t}, N={n}, K={k}"
        )));
    }
    for r in results {
        if r.residuals.len() != t {
            return Err(Error::Dimension(format!(
                "{}: residual length {} != factor length {t}",
                r.symbol,
                r.residuals.len()
            )));
        }
    }

    let alpha = DVector::from_iterator(n, results.iter().map(|r| r.alpha));

    // Residual covariance, divisor T (MLE form).
    let mut e = DMatrix::zeros(t, n);
    for (j, r) in results.iter().enumerate() {
        for i in 0..t {
            e[(i, j)] = r.residuals[i];
        }
    }
    let sigma = (e.transpose() * &e) / t as f64;

    let f = factors.matrix();
    let mu = DVector::from_iterator(k, (0..k).map(|j| f.column(j).mean()));
    let mut fc = f.clone();
    for j in 0..k {
        let m = mu[j];
        for i in 0..t {
            fc[(i, j)] -= m;
        }
    }
    let omega = (fc.transpose() * &fc) / t as f64;

    let sigma_inv = sigma.try_inverse().ok_or_else(|| {
        Error::Numeric(
            "residual covariance is singular; use fewer assets or more dates".into(),
        )
    })?;
    let omega_inv = omega
        .try_inverse()
        .ok_or_else(|| Error::Numeric("factor covariance is singular".into()))?;

    let alpha_quad = (alpha.transpose() * sigma_inv * &alpha)[(0, 0)];
    let mu_quad = (mu.transpose() * omega_inv * &mu)[(0, 0)];

    let statistic = ((t - n - k) as f64 / n as f64) * alpha_quad / (1.0 + mu_quad);
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        let dist = FisherSnedecor::new(n as f64, (t - n - k) as f64)
            .map_err(|e| Error::Numeric(format!("F distribution: {e}")))?;
        1.0 - dist.cdf(statistic)
    };
    let mean_abs_alpha = alpha.iter().map(|a| a.abs()).sum::<f64>() / n as f64;

    Ok(GrsResult {
        statistic,
        p_value,
        mean_abs_alpha,
        t,
        n,
        k,
    })
}

/// `symbol,alpha,<loading columns>,r_squared`, one row per asset.
pub fn write_regression_csv(results: &[RegressionResult], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let names = results
        .first()
        .map(|r| r.factor_names.clone())
        .unwrap_or_default();
    writeln!(file, "symbol,alpha,{},r_squared", names.join(","))?;
    for r in results {
        let loadings: Vec<String> = r.loadings.iter().map(|v| v.to_string()).collect();
        writeln!(
            file,
            "{},{},{},{}",
            r.symbol,
            r.alpha,
            loadings.join(","),
            r.r_squared
        )?;
    }
    Ok(())
}
