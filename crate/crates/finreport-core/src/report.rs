//! Per-stock report rendering: factor-by-factor return decomposition,
//! VaR-based risk wording, trend call, and an optional relay through an
//! external language-model endpoint with a deterministic template
//! fallback.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::factor_model::{FactorReturnsSeries, RegressionResult};
use crate::risk::VarEstimate;

/// Instruction sent to the relay endpoint alongside the serialized
/// decomposition context.
pub const LLM_PROMPT: &str = "Based on multi-dimensional predictive information and risk assessment values, a financial analysis report will be generated, comprising four main sections: return forecasting, risk assessment, overall trend prediction, and summary. Among them, the return forecasting section is required to include predictive analyses in six dimensions: Market Factor, Size Factor, Valuation (BP) Factor, Profitability Factor, Investment Factor, and News Effect Factor. The risk assessment section provides an estimation of the maximum potential loss, while the overall trend prediction outputs either 'Positive' or 'Negative' based on the overall profitability. The summary section includes a comprehensive analysis of the predictive information and risk assessment, offering an integrated evaluation of the investment potential of the stock.";

/// Loading-times-factor contributions for one date. `news_effect` is
/// `None` when the regression came from the plain five-factor model, in
/// which case the dimension is reported as unavailable rather than zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnDecomposition {
    pub market: f64,
    pub size: f64,
    pub valuation: f64,
    pub profitability: f64,
    pub investment: f64,
    pub news_effect: Option<f64>,
    pub alpha: f64,
    pub predicted_excess_return: f64,
}

impl ReturnDecomposition {
    pub fn contributions(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("Market Factor", Some(self.market)),
            ("Size Factor", Some(self.size)),
            ("Valuation (BP) Factor", Some(self.valuation)),
            ("Profitability Factor", Some(self.profitability)),
            ("Investment Factor", Some(self.investment)),
            ("News Effect Factor", self.news_effect),
        ]
    }
}

/// Multiply each regression loading by the factor value at `date`.
pub fn decompose(
    regression: &RegressionResult,
    factors: &FactorReturnsSeries,
    date: NaiveDate,
) -> Result<ReturnDecomposition> {
    let values = factors.at_date(date).ok_or_else(|| {
        Error::Validation(format!("date {date} not present in the factor series"))
    })?;
    if values.len() != regression.loadings.len() {
        return Err(Error::Dimension(format!(
            "{} loadings vs {} factor values",
            regression.loadings.len(),
            values.len()
        )));
    }
    let term = |i: usize| regression.loadings[i] * values[i];
    let news_effect = (regression.loadings.len() == 6).then(|| term(5));
    let total = regression.alpha
        + (0..regression.loadings.len()).map(term).sum::<f64>();
    Ok(ReturnDecomposition {
        market: term(0),
        size: term(1),
        valuation: term(2),
        profitability: term(3),
        investment: term(4),
        news_effect,
        alpha: regression.alpha,
        predicted_excess_return: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trend {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub symbol: String,
    pub date: NaiveDate,
    pub decomposition: ReturnDecomposition,
    pub var: VarEstimate,
    pub overall_trend: Trend,
    pub markdown: String,
    /// SHA-256 of the serialized inputs.
    pub provenance: String,
}

fn pct(v: f64) -> String {
    format!("{:+.4}%", v * 100.0)
}

fn describe(name: &str, value: Option<f64>) -> String {
    match value {
        Some(v) if v > 0.0 => format!("- {name}: {} (supports the return outlook)", pct(v)),
        Some(v) if v < 0.0 => format!("- {name}: {} (weighs on the return outlook)", pct(v)),
        Some(v) => format!("- {name}: {} (neutral)", pct(v)),
        None => format!("- {name}: unavailable (model fitted without a news factor)"),
    }
}

/// Deterministic template rendering. Trend is Positive iff the
/// predicted excess return is strictly positive; an exact zero reads as
/// Negative.
pub fn render_report(
    symbol: &str,
    date: NaiveDate,
    decomp: &ReturnDecomposition,
    var: &VarEstimate,
) -> Result<ReportDoc> {
    for v in [decomp.predicted_excess_return, decomp.alpha, var.var_value] {
        if !v.is_finite() {
            return Err(Error::Validation("non-finite report input".into()));
        }
    }
    let trend = if decomp.predicted_excess_return > 0.0 {
        Trend::Positive
    } else {
        Trend::Negative
    };

    let mut dims: Vec<String> = decomp
        .contributions()
        .into_iter()
        .map(|(name, v)| describe(name, v))
        .collect();
    dims.push(format!("- Alpha (unexplained): {}", pct(decomp.alpha)));

    let max_loss = var.var_value.abs();
    let trend_word = match trend {
        Trend::Positive => "Positive",
        Trend::Negative => "Negative",
    };
    let dominant = decomp
        .contributions()
        .into_iter()
        .filter_map(|(name, v)| v.map(|v| (name, v)))
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(name, _)| name)
        .unwrap_or("Market Factor");

    let markdown = format!(
        "# FinReport: {symbol} ({date})\n\n\
         ## Return Forecasting\n\
         Predicted excess return: {total}\n\n\
         {dims}\n\n\
         ## Risk Assessment\n\
         At the {conf:.1}% confidence level, the estimated maximum potential loss is {loss:.4}% of position value (VaR {var:+.6}).\n\n\
         ## Overall Trend Prediction\n\
         {trend_word}\n\n\
         ## Summary\n\
         The {trend_lower} outlook for {symbol} is driven chiefly by the {dominant}. \
         The forecast excess return is {total} against an estimated maximum potential loss of {loss:.4}%, \
         so the projected reward{reward_clause} the modeled downside at this confidence level.\n",
        total = pct(decomp.predicted_excess_return),
        dims = dims.join("\n"),
        conf = var.confidence * 100.0,
        loss = max_loss * 100.0,
        var = var.var_value,
        trend_lower = trend_word.to_lowercase(),
        reward_clause = if decomp.predicted_excess_return.abs() >= max_loss {
            " matches or exceeds"
        } else {
            " stays below"
        },
    );

    let mut hasher = Sha256::new();
    hasher.update(
        serde_json::to_vec(&(symbol, date, decomp, var))
            .map_err(|e| Error::Numeric(e.to_string()))?,
    );
    let provenance = hex::encode(hasher.finalize());

    Ok(ReportDoc {
        symbol: symbol.to_string(),
        date,
        decomposition: decomp.clone(),
        var: *var,
        overall_trend: trend,
        markdown,
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRelayConfig {
    pub enabled: bool,
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
}

impl Default for LlmRelayConfig {
    fn default() -> Self {
        LlmRelayConfig {
            enabled: false,
            endpoint: String::new(),
            model: String::new(),
            timeout_secs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayOutcome {
    pub text: String,
    /// True when the endpoint was attempted but the template output was
    /// used instead.
    pub fallback: bool,
}

/// Relay the report context through the configured endpoint. Disabled
/// configs and any transport failure both yield the template text; only
/// the `fallback` flag distinguishes them. Never a pipeline failure.
pub fn relay_llm(doc: &ReportDoc, config: &LlmRelayConfig) -> RelayOutcome {
    if !config.enabled {
        return RelayOutcome {
            text: doc.markdown.clone(),
            fallback: false,
        };
    }
    let body = serde_json::json!({
        "model": config.model,
        "prompt": LLM_PROMPT,
        "context": {
            "symbol": doc.symbol,
            "date": doc.date,
            "decomposition": doc.decomposition,
            "var": doc.var,
            "overall_trend": doc.overall_trend,
        },
    });
    let response = ureq::post(&config.endpoint)
        .timeout(std::time::Duration::from_secs(config.timeout_secs))
        .set("content-type", "application/json")
        .send_string(&body.to_string());
    match response {
        Ok(resp) => match resp.into_string() {
            Ok(text) => RelayOutcome {
                text,
                fallback: false,
            },
            Err(e) => {
                log::warn!("relay response unreadable ({e}); using template output");
                RelayOutcome {
                    text: doc.markdown.clone(),
                    fallback: true,
                }
            }
        },
        Err(e) => {
            log::warn!("relay request failed ({e}); using template output");
            RelayOutcome {
                text: doc.markdown.clone(),
                fallback: true,
            }
        }
    }
}
