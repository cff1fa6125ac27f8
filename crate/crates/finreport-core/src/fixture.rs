//! Seeded synthetic market generator. Prices follow Gaussian daily
//! returns; headlines are drawn from sentiment word banks, and a planted
//! effect links positive (negative) news to higher (lower) same-day and
//! next-day returns, so the classification and factor-pricing claims can
//! be exercised offline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::TrainConfig;
use crate::config::{
    BacktestConfig, DataPaths, EncoderConfig, RiskConfig, RunConfig, SplitConfig,
};
use crate::error::{Error, Result};
use crate::market_data::{FactorTable, NewsRecord, PriceBar, ReturnBasis, StockFactorRow};
use crate::news_encoding::{fallback_hash_encoder, NewsFeatureVector};
use crate::report::LlmRelayConfig;

const POSITIVE_PHRASES: [&str; 6] = [
    "profit surges beyond forecasts",
    "wins landmark supply contract",
    "raises full year guidance",
    "regulator approves flagship product",
    "record quarterly revenue reported",
    "announces major share buyback",
];

const NEGATIVE_PHRASES: [&str; 6] = [
    "profit warning stuns investors",
    "loses key customer account",
    "cuts full year guidance",
    "regulator fines company heavily",
    "factory halt disrupts shipments",
    "executive departs amid probe",
];

const NEUTRAL_PHRASES: [&str; 6] = [
    "holds annual shareholder meeting",
    "publishes routine filing update",
    "appoints new regional manager",
    "schedules earnings call date",
    "confirms dividend record date",
    "releases sustainability report",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub symbols: usize,
    /// Business days in the calendar.
    pub days: usize,
    pub start_date: NaiveDate,
    pub seed: u64,
    /// Probability a (symbol, day) carries a headline.
    pub news_prob: f64,
    /// Same-day return bump for positive news (negated for negative);
    /// half of it spills into the next day.
    pub news_effect: f64,
    pub role_dim: usize,
    pub edge_dim: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            symbols: 20,
            days: 320,
            start_date: NaiveDate::from_ymd_opt(2023, 1, 2).unwrap(),
            seed: 42,
            news_prob: 0.35,
            news_effect: 0.012,
            role_dim: 8,
            edge_dim: 4,
        }
    }
}

/// -1, 0, +1 planted sentiment of one headline.
pub type Sentiment = i8;

#[derive(Debug, Clone)]
pub struct FixtureData {
    pub calendar: Vec<NaiveDate>,
    pub prices: Vec<PriceBar>,
    pub factors: FactorTable,
    pub news: Vec<NewsRecord>,
    pub embeddings: BTreeMap<String, NewsFeatureVector>,
    pub risk_free: BTreeMap<NaiveDate, f64>,
    /// Ground truth: planted sentiment per (symbol, date) with news.
    pub sentiments: BTreeMap<(String, NaiveDate), Sentiment>,
}

fn business_calendar(start: NaiveDate, days: usize) -> Vec<NaiveDate> {
    let mut calendar = Vec::with_capacity(days);
    let mut date = start;
    while calendar.len() < days {
        if !matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            calendar.push(date);
        }
        date = date.succ_opt().expect("date overflow");
    }
    calendar
}

pub fn generate(spec: &FixtureSpec) -> Result<FixtureData> {
    if spec.symbols < 6 {
        return Err(Error::Validation(
            "fixture needs at least 6 symbols for portfolio sorts".into(),
        ));
    }
    if spec.days < 3 {
        return Err(Error::Validation("fixture needs at least 3 days".into()));
    }
    if !(0.0..=1.0).contains(&spec.news_prob) {
        return Err(Error::Validation("news_prob must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let standard = Normal::new(0.0, 1.0).unwrap();
    let calendar = business_calendar(spec.start_date, spec.days);

    struct SymbolTraits {
        name: String,
        base_price: f64,
        vol: f64,
        mktcap: f64,
        bp: f64,
        op: f64,
        inv: f64,
        /// Shifts the headline sentiment mix so symbols differ in
        /// average news tone; this is what the news factor prices.
        sentiment_bias: f64,
    }

    let traits: Vec<SymbolTraits> = (0..spec.symbols)
        .map(|i| SymbolTraits {
            name: format!("SYN{:02}", i + 1),
            base_price: rng.gen_range(20.0..200.0),
            vol: rng.gen_range(0.010..0.025),
            mktcap: rng.gen_range(1.0e9..80.0e9),
            bp: rng.gen_range(0.2..1.8),
            op: rng.gen_range(0.02..0.35),
            inv: rng.gen_range(-0.10..0.40),
            sentiment_bias: rng.gen_range(-0.6..0.6),
        })
        .collect();

    let mut prices = Vec::new();
    let mut factor_rows = Vec::new();
    let mut news = Vec::new();
    let mut embeddings = BTreeMap::new();
    let mut sentiments = BTreeMap::new();

    // Market-wide modulation of how strongly news moves prices each day.
    // Without it the positive-minus-negative news spread is nearly constant
    // over time, so no stock could covary with it; with it, stocks whose
    // headlines skew positive acquire a genuine time-series loading on the
    // news spread.
    let news_magnitude: Vec<f64> = calendar
        .iter()
        .map(|_| rng.gen_range(0.25..1.75))
        .collect();

    for traits in &traits {
        // Draw the news stream first so its return effect is known at
        // price time.
        let mut day_sentiment = vec![None::<(Sentiment, String)>; calendar.len()];
        for (t, slot) in day_sentiment.iter_mut().enumerate() {
            if rng.gen::<f64>() >= spec.news_prob {
                continue;
            }
            let p_pos = (1.0 / 3.0 + traits.sentiment_bias / 3.0).clamp(0.05, 0.9);
            let p_neg = (1.0 / 3.0 - traits.sentiment_bias / 3.0).clamp(0.05, 0.9);
            let u = rng.gen::<f64>();
            let (sentiment, bank): (Sentiment, &[&str; 6]) = if u < p_pos {
                (1, &POSITIVE_PHRASES)
            } else if u < p_pos + p_neg {
                (-1, &NEGATIVE_PHRASES)
            } else {
                (0, &NEUTRAL_PHRASES)
            };
            let phrase = bank[rng.gen_range(0..bank.len())];
            let headline = format!("{} {}", traits.name, phrase);
            *slot = Some((sentiment, headline));
            let _ = t;
        }

        let mut close = traits.base_price;
        let mut open = close;
        for (t, date) in calendar.iter().enumerate() {
            let mut ret = traits.vol * standard.sample(&mut rng);
            if let Some((s, _)) = &day_sentiment[t] {
                ret += *s as f64 * spec.news_effect * news_magnitude[t];
            }
            if t > 0 {
                if let Some((s, _)) = &day_sentiment[t - 1] {
                    ret += *s as f64 * spec.news_effect * news_magnitude[t - 1] / 2.0;
                }
            }
            if t > 0 {
                open = close;
                close *= 1.0 + ret;
            }
            let spread = 1.0 + rng.gen_range(0.0..0.004);
            prices.push(PriceBar {
                symbol: traits.name.clone(),
                date: *date,
                open,
                high: open.max(close) * spread,
                low: open.min(close) / spread,
                close,
                volume: rng.gen_range(10_000.0..5_000_000.0_f64).round(),
            });

            factor_rows.push(StockFactorRow {
                symbol: traits.name.clone(),
                date: *date,
                values: vec![
                    traits.mktcap * (1.0 + 0.0005 * t as f64),
                    traits.bp * (1.0 + rng.gen_range(-0.02..0.02)),
                    traits.op * (1.0 + rng.gen_range(-0.02..0.02)),
                    traits.inv + rng.gen_range(-0.01..0.01),
                ],
            });

            if let Some((sentiment, headline)) = &day_sentiment[t] {
                let id = format!("{}-{}", traits.name, date);
                embeddings.insert(
                    id.clone(),
                    fallback_hash_encoder(headline, spec.role_dim, spec.edge_dim, spec.seed),
                );
                news.push(NewsRecord {
                    symbol: traits.name.clone(),
                    date: *date,
                    headline: Some(headline.clone()),
                    embedding_id: Some(id),
                });
                sentiments.insert((traits.name.clone(), *date), *sentiment);
            }
        }
    }

    prices.sort_by(|a, b| (&a.symbol, a.date).cmp(&(&b.symbol, b.date)));
    factor_rows.sort_by(|a, b| (&a.symbol, a.date).cmp(&(&b.symbol, b.date)));
    news.sort_by(|a, b| (&a.symbol, a.date).cmp(&(&b.symbol, b.date)));

    let risk_free = calendar.iter().map(|d| (*d, 0.0001)).collect();

    Ok(FixtureData {
        calendar,
        prices,
        factors: FactorTable {
            columns: vec!["mktcap".into(), "bp".into(), "op".into(), "inv".into()],
            rows: factor_rows,
        },
        news,
        embeddings,
        risk_free,
        sentiments,
    })
}

#[derive(Debug, Clone)]
pub struct FixtureFiles {
    pub config: PathBuf,
    pub prices: PathBuf,
    pub factors: PathBuf,
    pub news: PathBuf,
    pub embeddings: PathBuf,
    pub risk_free: PathBuf,
}

/// Write the fixture plus a ready-to-run config into `dir`. Split dates
/// carve the calendar 60/20/20.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<FixtureFiles> {
    let data = generate(spec)?;
    std::fs::create_dir_all(dir)?;

    let prices_path = dir.join("prices.csv");
    {
        let mut out = String::from("symbol,date,open,high,low,close,volume\n");
        for bar in &data.prices {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                bar.symbol, bar.date, bar.open, bar.high, bar.low, bar.close, bar.volume
            ));
        }
        std::fs::write(&prices_path, out)?;
    }

    let factors_path = dir.join("factors.csv");
    {
        let mut out = format!("symbol,date,{}\n", data.factors.columns.join(","));
        for row in &data.factors.rows {
            let values: Vec<String> = row.values.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{},{},{}\n", row.symbol, row.date, values.join(",")));
        }
        std::fs::write(&factors_path, out)?;
    }

    let news_path = dir.join("news.jsonl");
    {
        let mut out = String::new();
        for record in &data.news {
            out.push_str(
                &serde_json::to_string(record)
                    .map_err(|e| Error::Numeric(e.to_string()))?,
            );
            out.push('\n');
        }
        std::fs::write(&news_path, out)?;
    }

    let embeddings_path = dir.join("embeddings.jsonl");
    crate::news_encoding::save_embeddings(&data.embeddings, &embeddings_path)?;

    let risk_free_path = dir.join("risk_free.csv");
    {
        let mut out = String::from("date,rf\n");
        for (date, rf) in &data.risk_free {
            out.push_str(&format!("{date},{rf}\n"));
        }
        std::fs::write(&risk_free_path, out)?;
    }

    let n = data.calendar.len();
    let splits = SplitConfig {
        train_end: data.calendar[(n * 6) / 10 - 1],
        validation_end: data.calendar[(n * 8) / 10 - 1],
        test_end: data.calendar[n - 1],
    };
    let config = RunConfig {
        rng_seed: spec.seed,
        return_basis: ReturnBasis::default(),
        output_dir: dir.join("runs"),
        data: DataPaths {
            prices: prices_path.clone(),
            factors: factors_path.clone(),
            news: news_path.clone(),
            embeddings: Some(embeddings_path.clone()),
            risk_free: Some(risk_free_path.clone()),
        },
        splits,
        encoder: EncoderConfig {
            role_dim: spec.role_dim,
            edge_dim: spec.edge_dim,
        },
        classifier: TrainConfig {
            hidden_dim: 64,
            epochs: 40,
            rng_seed: spec.seed,
            ..TrainConfig::default()
        },
        risk: RiskConfig::default(),
        backtest: BacktestConfig::default(),
        report: LlmRelayConfig::default(),
    };
    config.validate()?;
    let config_path = dir.join("config.toml");
    config.save(&config_path)?;

    Ok(FixtureFiles {
        config: config_path,
        prices: prices_path,
        factors: factors_path,
        news: news_path,
        embeddings: embeddings_path,
        risk_free: risk_free_path,
    })
}
