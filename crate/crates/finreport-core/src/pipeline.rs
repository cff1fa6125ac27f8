//! Stage orchestration: each stage reads its inputs from the run
//! directory keyed by the config hash, writes its artifacts there, and
//! refuses to touch a directory produced by a different config. Stages
//! are independently re-runnable; `run_pipeline` chains them all.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::backtest::{
    annualized_return, max_drawdown, run_backtest, sharpe_ratio, write_curve_csv,
    write_ledger_csv, TradePlan,
};
use crate::classifier::{
    assign_labels, evaluate, load_checkpoint, predict, save_checkpoint, train, Checkpoint,
    Dataset, Label, Metrics, CHECKPOINT_VERSION,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::factor_model::{
    factor_returns_ff5, factor_returns_ff5news, grs_test, ols_regress, sort_groups,
    write_regression_csv, DailyCrossSection, FactorReturnsSeries, FirmCharacteristics,
    GrsResult, RegressionResult,
};
use crate::market_data::{
    align_panel_basis, load_factors, load_news, load_panel, load_prices, save_panel,
    AlignedPanel, PanelRow, ResolvedNews,
};
use crate::news_encoding::{fallback_hash_encoder, load_embeddings, NewsFeatureVector};
use crate::report::{decompose, relay_llm, render_report, ReportDoc};
use crate::risk::{
    compute_var, empirical_quantile, evaluate_var, fit_egarch, VarEstimate, VarMetrics,
};

/// Artifact locations inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }
    pub fn panel(&self) -> PathBuf {
        self.dir.join("panel.json")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.dir.join("predictions.csv")
    }
    pub fn ff5(&self) -> PathBuf {
        self.dir.join("factors_ff5.csv")
    }
    pub fn ff5news(&self) -> PathBuf {
        self.dir.join("factors_ff5news.csv")
    }
    pub fn regressions_csv(&self, news: bool) -> PathBuf {
        if news {
            self.dir.join("regressions_ff5news.csv")
        } else {
            self.dir.join("regressions_ff5.csv")
        }
    }
    pub fn regressions_json(&self, news: bool) -> PathBuf {
        if news {
            self.dir.join("regressions_ff5news.json")
        } else {
            self.dir.join("regressions_ff5.json")
        }
    }
    pub fn grs(&self) -> PathBuf {
        self.dir.join("grs.json")
    }
    pub fn risk_csv(&self) -> PathBuf {
        self.dir.join("risk.csv")
    }
    pub fn risk_series(&self) -> PathBuf {
        self.dir.join("risk_series.json")
    }
    pub fn risk_metrics(&self) -> PathBuf {
        self.dir.join("risk_metrics.json")
    }
    pub fn ledger(&self) -> PathBuf {
        self.dir.join("ledger.csv")
    }
    pub fn curve(&self) -> PathBuf {
        self.dir.join("curve.csv")
    }
    pub fn backtest_metrics(&self) -> PathBuf {
        self.dir.join("backtest_metrics.json")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.dir.join("reports")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    config: RunConfig,
}

/// Create (or re-enter) the run directory for this config. A directory
/// whose manifest records a different config hash is refused, so
/// artifacts from different configs cannot be mixed.
pub fn prepare_run_dir(config: &RunConfig) -> Result<RunPaths> {
    let paths = RunPaths {
        dir: config.run_dir(),
    };
    std::fs::create_dir_all(&paths.dir)?;
    let hash = config.hash();
    let manifest_path = paths.manifest();
    if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: manifest_path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        if manifest.config_hash != hash {
            return Err(Error::Validation(format!(
                "run directory {} was produced by config {} but the current config hashes to {}; refusing to mix artifacts",
                paths.dir.display(),
                &manifest.config_hash[..16],
                &hash[..16]
            )));
        }
    } else {
        let manifest = Manifest {
            config_hash: hash,
            config: config.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        std::fs::write(&manifest_path, text)?;
    }
    Ok(paths)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Validation(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn require_artifact(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Validation(format!(
            "artifact {} is missing; run the `{produced_by}` stage first",
            path.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub rows: usize,
    pub symbols: usize,
    pub news_rows: usize,
    pub dropped_factor_rows: usize,
}

/// Load and align prices, factors, and news; persist the panel.
/// News features come from the embeddings store when the record names a
/// stored id, otherwise from the deterministic hashing encoder.
pub fn stage_ingest(config: &RunConfig) -> Result<IngestSummary> {
    let paths = prepare_run_dir(config)?;
    require_file(&config.data.prices, "prices file")?;
    require_file(&config.data.factors, "factors file")?;
    require_file(&config.data.news, "news file")?;

    let prices = load_prices(&config.data.prices)?;
    let factors = load_factors(&config.data.factors)?;
    let news_records = load_news(&config.data.news)?;
    let store = match &config.data.embeddings {
        Some(path) => {
            require_file(path, "embeddings file")?;
            load_embeddings(path)?
        }
        None => BTreeMap::new(),
    };

    let (d, d_e) = (config.encoder.role_dim, config.encoder.edge_dim);
    let mut resolved = Vec::with_capacity(news_records.len());
    for record in news_records {
        let features = match record.embedding_id.as_deref().and_then(|id| store.get(id)) {
            Some(f) => {
                if f.role_dim() != d || f.edge_dim() != d_e {
                    return Err(Error::Dimension(format!(
                        "embedding {} has dims ({}, {}); config expects ({d}, {d_e})",
                        record.embedding_id.as_deref().unwrap_or("?"),
                        f.role_dim(),
                        f.edge_dim()
                    )));
                }
                f.clone()
            }
            None => fallback_hash_encoder(
                record.headline.as_deref().unwrap_or(""),
                d,
                d_e,
                config.rng_seed,
            ),
        };
        resolved.push(ResolvedNews {
            symbol: record.symbol,
            date: record.date,
            headline: record.headline,
            features,
        });
    }

    let panel = align_panel_basis(&prices, &factors, &resolved, config.return_basis)?;
    save_panel(&panel, &paths.panel())?;
    Ok(IngestSummary {
        rows: panel.rows.len(),
        symbols: panel.symbols().len(),
        news_rows: panel.rows.iter().filter(|r| r.news.is_some()).count(),
        dropped_factor_rows: panel.dropped_factor_rows,
    })
}

fn load_run_panel(paths: &RunPaths) -> Result<AlignedPanel> {
    require_artifact(&paths.panel(), "ingest")?;
    load_panel(&paths.panel())
}

// ---------------------------------------------------------------------------
// dataset assembly

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Window {
    Train,
    Validation,
    Test,
    Outside,
}

fn window_of(config: &RunConfig, date: NaiveDate) -> Window {
    let s = &config.splits;
    if date <= s.train_end {
        Window::Train
    } else if date <= s.validation_end {
        Window::Validation
    } else if date <= s.test_end {
        Window::Test
    } else {
        Window::Outside
    }
}

/// Per-column mean/std of factor values over the training window.
fn factor_standardization(config: &RunConfig, panel: &AlignedPanel) -> (Vec<f64>, Vec<f64>) {
    let m = panel.factor_columns.len();
    let mut sums = vec![0.0; m];
    let mut count = 0usize;
    let train_rows: Vec<&PanelRow> = panel
        .rows
        .iter()
        .filter(|r| window_of(config, r.date) == Window::Train && r.factors.is_some())
        .collect();
    for row in &train_rows {
        for (s, v) in sums.iter_mut().zip(row.factors.as_ref().unwrap()) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 {
        return (vec![0.0; m], vec![1.0; m]);
    }
    let means: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; m];
    for row in &train_rows {
        for ((s, v), mean) in sq.iter_mut().zip(row.factors.as_ref().unwrap()).zip(&means) {
            *s += (v - mean).powi(2);
        }
    }
    let stds: Vec<f64> = sq
        .iter()
        .map(|s| {
            let std = (s / count as f64).sqrt();
            if std > 0.0 {
                std
            } else {
                1.0
            }
        })
        .collect();
    (means, stds)
}

fn standardized_input(
    row: &PanelRow,
    news: &NewsFeatureVector,
    means: &[f64],
    stds: &[f64],
) -> Option<Vec<f64>> {
    let factors = row.factors.as_ref()?;
    let mut input = news.flatten();
    input.extend(
        factors
            .iter()
            .zip(means.iter().zip(stds))
            .map(|(v, (m, s))| (v - m) / s),
    );
    Some(input)
}

/// Next-day quantile labels per (symbol, date): the label of a news day
/// t ranks the return realized on the following trading day.
/// Quantile labels from each date's own cross-section of one-day returns.
fn same_day_labels(panel: &AlignedPanel) -> BTreeMap<(String, NaiveDate), Label> {
    let mut by_date: BTreeMap<NaiveDate, BTreeMap<String, f64>> = BTreeMap::new();
    for row in &panel.rows {
        if let Some(r) = row.return_1d {
            by_date
                .entry(row.date)
                .or_default()
                .insert(row.symbol.clone(), r);
        }
    }
    let mut labels = BTreeMap::new();
    for (date, cross_section) in by_date {
        for (symbol, label) in assign_labels(&cross_section) {
            if let Some(label) = label {
                labels.insert((symbol, date), label);
            }
        }
    }
    labels
}

/// Rows with news in the given window, paired with same-day rank labels.
fn build_dataset(
    config: &RunConfig,
    panel: &AlignedPanel,
    labels: &BTreeMap<(String, NaiveDate), Label>,
    means: &[f64],
    stds: &[f64],
    window: Window,
) -> Dataset {
    let mut data = Dataset::default();
    for row in &panel.rows {
        if window_of(config, row.date) != window {
            continue;
        }
        let Some(news) = &row.news else { continue };
        let Some(label) = labels.get(&(row.symbol.clone(), row.date)) else {
            continue;
        };
        if let Some(input) = standardized_input(row, news, means, stds) {
            data.inputs.push(input);
            data.labels.push(*label);
        }
    }
    data
}

// ---------------------------------------------------------------------------
// train / predict

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub train_samples: usize,
    pub validation_samples: usize,
    pub epochs_run: usize,
    pub validation_metrics: Option<Metrics>,
}

pub fn stage_train(config: &RunConfig) -> Result<TrainSummary> {
    let paths = prepare_run_dir(config)?;
    let panel = load_run_panel(&paths)?;
    let labels = same_day_labels(&panel);
    let (means, stds) = factor_standardization(config, &panel);
    let train_set = build_dataset(config, &panel, &labels, &means, &stds, Window::Train);
    let val_set = build_dataset(config, &panel, &labels, &means, &stds, Window::Validation);
    if train_set.is_empty() {
        return Err(Error::Validation(
            "no labeled news samples fall in the training window".into(),
        ));
    }
    let val = (!val_set.is_empty()).then_some(&val_set);
    let (params, metrics) = train(&train_set, val, &config.classifier)?;
    let validation_metrics = val.map(|v| evaluate(&params, v)).transpose()?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        params,
        config: config.classifier.clone(),
        factor_standardization: Some((means, stds)),
    };
    save_checkpoint(&checkpoint, &paths.checkpoint())?;
    Ok(TrainSummary {
        train_samples: train_set.len(),
        validation_samples: val_set.len(),
        epochs_run: metrics.len(),
        validation_metrics,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictSummary {
    pub rows: usize,
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
}

/// Classify every news-bearing panel row and persist
/// `symbol,date,label,p_positive,p_neutral,p_negative`.
pub fn stage_predict(config: &RunConfig) -> Result<PredictSummary> {
    let paths = prepare_run_dir(config)?;
    let panel = load_run_panel(&paths)?;
    require_artifact(&paths.checkpoint(), "train")?;
    let checkpoint = load_checkpoint(&paths.checkpoint())?;
    let (means, stds) = checkpoint.factor_standardization.clone().unwrap_or((
        vec![0.0; panel.factor_columns.len()],
        vec![1.0; panel.factor_columns.len()],
    ));

    let mut rows: Vec<(String, NaiveDate, Label, [f64; 3])> = Vec::new();
    for row in &panel.rows {
        let Some(news) = &row.news else { continue };
        let Some(input) = standardized_input(row, news, &means, &stds) else {
            continue;
        };
        let probs = predict(&checkpoint.params, &input)?;
        let arg = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let label = Label::from_index(arg).unwrap();
        rows.push((
            row.symbol.clone(),
            row.date,
            label,
            [probs[0], probs[1], probs[2]],
        ));
    }
    rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));

    let mut file = std::fs::File::create(paths.predictions())?;
    writeln!(file, "symbol,date,label,p_positive,p_neutral,p_negative")?;
    let mut counts = [0usize; 3];
    for (symbol, date, label, p) in &rows {
        counts[label.index()] += 1;
        writeln!(
            file,
            "{symbol},{date},{},{},{},{}",
            label.name(),
            p[0],
            p[1],
            p[2]
        )?;
    }
    Ok(PredictSummary {
        rows: rows.len(),
        positive: counts[Label::Positive.index()],
        neutral: counts[Label::Neutral.index()],
        negative: counts[Label::Negative.index()],
    })
}

/// Read back the predictions artifact.
pub fn load_predictions(
    paths: &RunPaths,
) -> Result<BTreeMap<(String, NaiveDate), Label>> {
    let path = paths.predictions();
    require_artifact(&path, "predict")?;
    let text = std::fs::read_to_string(&path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let date = NaiveDate::parse_from_str(fields[1], "%Y-%m-%d").map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let label = match fields[2] {
            "positive" => Label::Positive,
            "neutral" => Label::Neutral,
            "negative" => Label::Negative,
            other => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("unknown label {other:?}"),
                })
            }
        };
        out.insert((fields[0].to_string(), date), label);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// factors / regress / grs

fn load_risk_free(config: &RunConfig) -> Result<BTreeMap<NaiveDate, f64>> {
    let Some(path) = &config.data.risk_free else {
        return Ok(BTreeMap::new());
    };
    require_file(path, "risk-free file")?;
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line.trim() != "date,rf" {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    message: format!("expected header `date,rf`, got {line:?}"),
                });
            }
            continue;
        }
        let parse = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: msg,
        };
        let (date, rf) = line
            .split_once(',')
            .ok_or_else(|| parse("expected 2 fields".into()))?;
        let date =
            NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|e| parse(e.to_string()))?;
        let rf: f64 = rf.trim().parse().map_err(|e: std::num::ParseFloatError| {
            parse(e.to_string())
        })?;
        out.insert(date, rf);
    }
    Ok(out)
}

/// Assemble the daily cross-sections used by the portfolio sorts.
/// News groups come from the classifier predictions; symbols without
/// news that day default to the Medium group inside the sorts.
fn daily_cross_sections(
    panel: &AlignedPanel,
    predictions: &BTreeMap<(String, NaiveDate), Label>,
) -> Vec<DailyCrossSection> {
    let mut by_date: BTreeMap<NaiveDate, Vec<&PanelRow>> = BTreeMap::new();
    for row in &panel.rows {
        by_date.entry(row.date).or_default().push(row);
    }
    let mut days = Vec::new();
    for (date, rows) in by_date {
        let mut returns = BTreeMap::new();
        let mut characteristics = Vec::new();
        let mut news_labels = BTreeMap::new();
        for row in rows {
            let (Some(ret), Some(factors)) = (row.return_1d, row.factors.as_ref()) else {
                continue;
            };
            if factors.len() < 4 {
                continue;
            }
            returns.insert(row.symbol.clone(), ret);
            characteristics.push(FirmCharacteristics {
                symbol: row.symbol.clone(),
                mktcap: factors[0],
                bp: factors[1],
                profitability: factors[2],
                investment: factors[3],
            });
            if let Some(label) = predictions.get(&(row.symbol.clone(), date)) {
                news_labels.insert(row.symbol.clone(), *label);
            }
        }
        if returns.len() < 6 {
            log::warn!(
                "{date}: only {} sortable stocks; date skipped in factor construction",
                returns.len()
            );
            continue;
        }
        let groups = match sort_groups(&characteristics, Some(&news_labels)) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("{date}: sorts failed ({e}); date skipped");
                continue;
            }
        };
        days.push(DailyCrossSection {
            date,
            returns,
            groups,
        });
    }
    days
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorsSummary {
    pub dates: usize,
}

pub fn stage_factors(config: &RunConfig) -> Result<FactorsSummary> {
    let paths = prepare_run_dir(config)?;
    let panel = load_run_panel(&paths)?;
    let predictions = load_predictions(&paths)?;
    let risk_free = load_risk_free(config)?;
    let days = daily_cross_sections(&panel, &predictions);
    if days.is_empty() {
        return Err(Error::Validation(
            "no date has enough stocks for portfolio sorts".into(),
        ));
    }
    let ff5 = factor_returns_ff5(&days, &risk_free)?;
    let ff5news = factor_returns_ff5news(&days, &risk_free)?;
    ff5.write_csv(&paths.ff5())?;
    ff5news.write_csv(&paths.ff5news())?;
    Ok(FactorsSummary { dates: ff5.len() })
}

/// Parse a factor CSV written by `FactorReturnsSeries::write_csv`.
pub fn load_factor_csv(path: &Path) -> Result<FactorReturnsSeries> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: "empty file".into(),
    })?;
    let with_news = match header.trim() {
        "date,mkt_excess,smb,hml,rmw,cma,news,rf" => true,
        "date,mkt_excess,smb,hml,rmw,cma,rf" => false,
        other => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                message: format!("unexpected factor header {other:?}"),
            })
        }
    };
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
    for (i, line) in lines {
        let parse = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: msg,
        };
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if with_news { 8 } else { 7 };
        if fields.len() != expected {
            return Err(parse(format!(
                "expected {expected} fields, got {}",
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| parse(format!("bad number {s:?}: {e}")))
        };
        series.dates.push(
            NaiveDate::parse_from_str(fields[0], "%Y-%m-%d")
                .map_err(|e| parse(e.to_string()))?,
        );
        series.mkt_excess.push(num(fields[1])?);
        series.smb.push(num(fields[2])?);
        series.hml.push(num(fields[3])?);
        series.rmw.push(num(fields[4])?);
        series.cma.push(num(fields[5])?);
        if with_news {
            series.news.as_mut().unwrap().push(num(fields[6])?);
        }
        series.risk_free.push(num(fields[expected - 1])?);
    }
    Ok(series)
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressSummary {
    pub assets: usize,
    pub skipped_symbols: Vec<String>,
}

fn regress_against(
    panel: &AlignedPanel,
    factors: &FactorReturnsSeries,
) -> Result<(Vec<RegressionResult>, Vec<String>)> {
    let returns = panel.returns_map();
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for symbol in panel.symbols() {
        let mut excess = Vec::with_capacity(factors.len());
        let mut complete = true;
        for (date, rf) in factors.dates.iter().zip(&factors.risk_free) {
            match returns.get(&(symbol.clone(), *date)) {
                Some(r) => excess.push(r - rf),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            log::warn!("{symbol}: missing returns on factor dates; skipped in regressions");
            skipped.push(symbol);
            continue;
        }
        results.push(ols_regress(&symbol, &excess, factors)?);
    }
    Ok((results, skipped))
}

fn write_regressions_json(
    results: &[RegressionResult],
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    #[derive(Serialize)]
    struct Artifact<'a> {
        config_hash: &'a str,
        results: &'a [RegressionResult],
    }
    let text = serde_json::to_string_pretty(&Artifact {
        config_hash,
        results,
    })
    .map_err(|e| Error::Numeric(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn load_regressions_json(path: &Path) -> Result<Vec<RegressionResult>> {
    #[derive(Deserialize)]
    struct Artifact {
        #[allow(dead_code)]
        config_hash: String,
        results: Vec<RegressionResult>,
    }
    let text = std::fs::read_to_string(path)?;
    let artifact: Artifact = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(artifact.results)
}

pub fn stage_regress(config: &RunConfig) -> Result<RegressSummary> {
    let paths = prepare_run_dir(config)?;
    let panel = load_run_panel(&paths)?;
    require_artifact(&paths.ff5(), "factors")?;
    require_artifact(&paths.ff5news(), "factors")?;
    let hash = config.hash();
    let mut skipped_symbols = Vec::new();
    let mut assets = 0;
    for news in [false, true] {
        let factors = load_factor_csv(&if news { paths.ff5news() } else { paths.ff5() })?;
        let (results, skipped) = regress_against(&panel, &factors)?;
        if results.is_empty() {
            return Err(Error::Validation(
                "no symbol has complete returns over the factor dates".into(),
            ));
        }
        write_regression_csv(&results, &paths.regressions_csv(news))?;
        write_regressions_json(&results, &hash, &paths.regressions_json(news))?;
        assets = results.len();
        skipped_symbols = skipped;
    }
    Ok(RegressSummary {
        assets,
        skipped_symbols,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrsArtifact {
    pub config_hash: String,
    pub ff5: GrsResult,
    pub ff5news: GrsResult,
}

pub fn stage_grs(config: &RunConfig) -> Result<GrsArtifact> {
    let paths = prepare_run_dir(config)?;
    let mut outcomes = Vec::new();
    for news in [false, true] {
        require_artifact(&paths.regressions_json(news), "regress")?;
        let results = load_regressions_json(&paths.regressions_json(news))?;
        let factors = load_factor_csv(&if news { paths.ff5news() } else { paths.ff5() })?;
        outcomes.push(grs_test(&results, &factors)?);
    }
    let artifact = GrsArtifact {
        config_hash: config.hash(),
        ff5: outcomes[0].clone(),
        ff5news: outcomes[1].clone(),
    };
    let text =
        serde_json::to_string_pretty(&artifact).map_err(|e| Error::Numeric(e.to_string()))?;
    std::fs::write(paths.grs(), text)?;
    Ok(artifact)
}

// ---------------------------------------------------------------------------
// risk

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymbolRisk {
    pub dates: Vec<NaiveDate>,
    pub estimates: Vec<VarEstimate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskArtifact {
    pub config_hash: String,
    pub series: BTreeMap<String, SymbolRisk>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskMetricsArtifact {
    pub config_hash: String,
    pub per_symbol: BTreeMap<String, VarMetrics>,
    pub average: Option<VarMetrics>,
}

pub fn stage_risk(config: &RunConfig) -> Result<RiskMetricsArtifact> {
    let paths = prepare_run_dir(config)?;
    let panel = load_run_panel(&paths)?;

    let mut by_symbol: BTreeMap<&str, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for row in &panel.rows {
        if let Some(r) = row.return_1d {
            by_symbol.entry(&row.symbol).or_default().push((row.date, r));
        }
    }

    let window = config.risk.var_window;
    let mut series = BTreeMap::new();
    let mut per_symbol = BTreeMap::new();
    let mut csv = String::from("symbol,date,mu,sigma,var,actual_var,violation_flag\n");
    for (symbol, obs) in by_symbol {
        let dates: Vec<NaiveDate> = obs.iter().map(|(d, _)| *d).collect();
        let returns: Vec<f64> = obs.iter().map(|(_, r)| *r).collect();
        let fit = fit_egarch(
            &returns,
            config.risk.p,
            config.risk.q,
            config.rng_seed,
            config.risk.shock_form,
        )?;
        let estimates = compute_var(&fit.vol, config.risk.confidence)?;
        for (t, (date, est)) in dates.iter().zip(&estimates).enumerate() {
            let actual = if t >= window {
                empirical_quantile(&returns[t - window..t], 1.0 - est.confidence).to_string()
            } else {
                String::new()
            };
            let violation = u8::from(returns[t] < est.var_value);
            csv.push_str(&format!(
                "{symbol},{date},{},{},{},{actual},{violation}\n",
                est.mu, est.sigma, est.var_value
            ));
        }
        per_symbol.insert(
            symbol.to_string(),
            evaluate_var(&estimates, &returns, window)?,
        );
        series.insert(symbol.to_string(), SymbolRisk { dates, estimates });
    }
    if series.is_empty() {
        return Err(Error::Validation("panel has no return series".into()));
    }

    std::fs::write(paths.risk_csv(), csv)?;
    let hash = config.hash();
    let artifact = RiskArtifact {
        config_hash: hash.clone(),
        series,
    };
    std::fs::write(
        paths.risk_series(),
        serde_json::to_string_pretty(&artifact).map_err(|e| Error::Numeric(e.to_string()))?,
    )?;
    let metrics = RiskMetricsArtifact {
        config_hash: hash,
        average: crate::risk::average_metrics(
            &per_symbol.values().cloned().collect::<Vec<_>>(),
        ),
        per_symbol,
    };
    std::fs::write(
        paths.risk_metrics(),
        serde_json::to_string_pretty(&metrics).map_err(|e| Error::Numeric(e.to_string()))?,
    )?;
    Ok(metrics)
}

fn load_risk_artifact(paths: &RunPaths) -> Result<RiskArtifact> {
    require_artifact(&paths.risk_series(), "risk")?;
    let text = std::fs::read_to_string(paths.risk_series())?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: paths.risk_series().display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// backtest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestArtifact {
    pub config_hash: String,
    pub trading_days: usize,
    pub traded_positions: usize,
    pub skipped_positions: usize,
    pub annualized_return: f64,
    pub max_drawdown: f64,
    /// Absent when daily returns have zero variance.
    pub sharpe_ratio: Option<f64>,
}

/// Trade plans from predictions: a symbol predicted positive on news
/// day t is bought at the next trading day's open and sold at the open
/// after that (one-day holding).
pub fn plans_from_predictions(
    panel: &AlignedPanel,
    predictions: &BTreeMap<(String, NaiveDate), Label>,
    test_only: Option<&RunConfig>,
) -> Vec<TradePlan> {
    let next_date: BTreeMap<NaiveDate, NaiveDate> = panel
        .calendar
        .windows(2)
        .map(|w| (w[0], w[1]))
        .collect();
    let mut by_date: BTreeMap<NaiveDate, BTreeSet<String>> = BTreeMap::new();
    for ((symbol, date), label) in predictions {
        if *label != Label::Positive {
            continue;
        }
        if let Some(config) = test_only {
            if window_of(config, *date) != Window::Test {
                continue;
            }
        }
        if let Some(next) = next_date.get(date) {
            by_date.entry(*next).or_default().insert(symbol.clone());
        }
    }
    by_date
        .into_iter()
        .map(|(date, symbols)| TradePlan { date, symbols })
        .collect()
}

pub fn stage_backtest(config: &RunConfig) -> Result<BacktestArtifact> {
    let paths = prepare_run_dir(config)?;
    let panel = load_run_panel(&paths)?;
    let predictions = load_predictions(&paths)?;
    let plans = plans_from_predictions(&panel, &predictions, Some(config));
    if plans.is_empty() {
        log::warn!("no positive predictions in the test window; backtest is all cash");
    }
    let outcome = run_backtest(&panel, &plans, config.backtest.cost)?;
    write_ledger_csv(&outcome.ledger, &paths.ledger())?;
    write_curve_csv(&outcome.curve, &paths.curve())?;
    let artifact = BacktestArtifact {
        config_hash: config.hash(),
        trading_days: outcome.curve.dates.len(),
        traded_positions: outcome.ledger.len(),
        skipped_positions: outcome.skipped.len(),
        annualized_return: annualized_return(&outcome.curve, 252.0)?,
        max_drawdown: max_drawdown(&outcome.curve)?,
        sharpe_ratio: sharpe_ratio(&outcome.curve, 0.0, 252.0).ok(),
    };
    std::fs::write(
        paths.backtest_metrics(),
        serde_json::to_string_pretty(&artifact).map_err(|e| Error::Numeric(e.to_string()))?,
    )?;
    Ok(artifact)
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub reports: usize,
    pub date: NaiveDate,
    pub relay_fallbacks: usize,
}

/// Render one report per regression asset at the last factor date,
/// writing Markdown plus a JSON sidecar per symbol.
pub fn stage_report(config: &RunConfig) -> Result<ReportSummary> {
    let paths = prepare_run_dir(config)?;
    require_artifact(&paths.regressions_json(true), "regress")?;
    let regressions = load_regressions_json(&paths.regressions_json(true))?;
    let factors = load_factor_csv(&paths.ff5news())?;
    let risk = load_risk_artifact(&paths)?;
    let date = *factors
        .dates
        .last()
        .ok_or_else(|| Error::Validation("factor series is empty".into()))?;

    std::fs::create_dir_all(paths.reports_dir())?;
    let hash = config.hash();
    let mut reports = 0;
    let mut relay_fallbacks = 0;
    for regression in &regressions {
        let Some(symbol_risk) = risk.series.get(&regression.symbol) else {
            log::warn!("{}: no risk series; report skipped", regression.symbol);
            continue;
        };
        let Some(idx) = symbol_risk.dates.iter().position(|d| *d == date) else {
            log::warn!(
                "{}: no VaR estimate on {date}; report skipped",
                regression.symbol
            );
            continue;
        };
        let decomp = decompose(regression, &factors, date)?;
        let doc = render_report(&regression.symbol, date, &decomp, &symbol_risk.estimates[idx])?;
        let outcome = relay_llm(&doc, &config.report);
        if outcome.fallback {
            relay_fallbacks += 1;
        }
        let base = paths
            .reports_dir()
            .join(format!("{}-{date}", regression.symbol));
        std::fs::write(base.with_extension("md"), &outcome.text)?;
        #[derive(Serialize)]
        struct Sidecar<'a> {
            config_hash: &'a str,
            relay_fallback: bool,
            doc: &'a ReportDoc,
        }
        let sidecar = serde_json::to_string_pretty(&Sidecar {
            config_hash: &hash,
            relay_fallback: outcome.fallback,
            doc: &doc,
        })
        .map_err(|e| Error::Numeric(e.to_string()))?;
        std::fs::write(base.with_extension("json"), sidecar)?;
        reports += 1;
    }
    Ok(ReportSummary {
        reports,
        date,
        relay_fallbacks,
    })
}

// ---------------------------------------------------------------------------
// full pipeline

fn annotate(err: Error, stage: &str) -> Error {
    match err {
        Error::Io(e) => Error::Io(std::io::Error::new(
            e.kind(),
            format!("stage {stage}: {e}"),
        )),
        Error::Parse { path, line, message } => Error::Parse {
            path,
            line,
            message: format!("stage {stage}: {message}"),
        },
        Error::Validation(m) => Error::Validation(format!("stage {stage}: {m}")),
        Error::Dimension(m) => Error::Dimension(format!("stage {stage}: {m}")),
        Error::Config(m) => Error::Config(format!("stage {stage}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("stage {stage}: {m}")),
    }
}

/// Run every stage in order. A failing stage halts the pipeline with
/// its name attached; artifacts of completed stages stay in place.
pub fn run_pipeline(config: &RunConfig) -> Result<RunPaths> {
    let paths = prepare_run_dir(config)?;
    log::info!("stage ingest");
    stage_ingest(config).map_err(|e| annotate(e, "ingest"))?;
    log::info!("stage train");
    stage_train(config).map_err(|e| annotate(e, "train"))?;
    log::info!("stage predict");
    stage_predict(config).map_err(|e| annotate(e, "predict"))?;
    log::info!("stage factors");
    stage_factors(config).map_err(|e| annotate(e, "factors"))?;
    log::info!("stage regress");
    stage_regress(config).map_err(|e| annotate(e, "regress"))?;
    log::info!("stage grs");
    stage_grs(config).map_err(|e| annotate(e, "grs"))?;
    log::info!("stage risk");
    stage_risk(config).map_err(|e| annotate(e, "risk"))?;
    log::info!("stage backtest");
    stage_backtest(config).map_err(|e| annotate(e, "backtest"))?;
    log::info!("stage report");
    stage_report(config).map_err(|e| annotate(e, "report"))?;
    Ok(paths)
}
