//! EGARCH(p,q) volatility filtering and fitting, value-at-risk
//! estimation, and VaR backtest metrics.
//!
//! The log-variance recursion is
//!
//!   ln s2_t = omega + sum_l alpha_l (|e_{t-l}| - sqrt(2/pi))
//!           + sum_j beta_j ln s2_{t-j} + sum_k gamma_k e2_{t-k}
//!
//! with a squared-shock gamma term. A signed-shock variant
//! (gamma_k * e_{t-k}, the textbook asymmetry term) is available behind
//! [`ShockForm`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::optim::nelder_mead;

/// E|Z| for Z ~ N(0,1).
pub const EXPECTED_ABS_NORMAL: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

const LOG_VAR_LIMIT: f64 = 700.0;
const MULTI_STARTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShockForm {
    /// gamma_k multiplies e^2_{t-k}.
    #[default]
    SquaredShock,
    /// gamma_k multiplies e_{t-k} (textbook asymmetric EGARCH).
    SignedShock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgarchParams {
    pub omega: f64,
    /// p absolute-shock weights.
    pub alpha: Vec<f64>,
    /// q log-variance persistence weights; fitting enforces sum < 1.
    pub beta: Vec<f64>,
    /// q shock weights (squared or signed per [`ShockForm`]).
    pub gamma: Vec<f64>,
}

impl EgarchParams {
    pub fn order(&self) -> (usize, usize) {
        (self.alpha.len(), self.beta.len())
    }

    pub fn is_stationary(&self) -> bool {
        self.beta.iter().sum::<f64>() < 1.0
    }

    fn from_vec(v: &[f64], p: usize, q: usize) -> Self {
        EgarchParams {
            omega: v[0],
            alpha: v[1..1 + p].to_vec(),
            beta: v[1 + p..1 + p + q].to_vec(),
            gamma: v[1 + p + q..1 + p + 2 * q].to_vec(),
        }
    }
}

/// Filtered conditional volatilities with the constant expected return
/// and the residuals they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolSeries {
    pub mu: f64,
    pub residuals: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Run the log-variance recursion over a residual series. The first
/// max(p,q) values are pinned at `init_var` (pre-sample
/// initialization). Lagged shocks enter standardized by their own
/// conditional volatility (e/sigma), which is what makes
/// E|shock| = sqrt(2/pi) the right centering under Gaussian
/// innovations and keeps the shock terms identified regardless of the
/// return scale.
pub fn egarch_filter(
    params: &EgarchParams,
    residuals: &[f64],
    init_var: f64,
    form: ShockForm,
) -> Result<Vec<f64>> {
    let (p, q) = params.order();
    let max_lag = p.max(q);
    if residuals.len() <= max_lag {
        return Err(Error::Validation(format!(
            "residual series of length {} is too short for order ({p},{q})",
            residuals.len()
        )));
    }
    if init_var <= 0.0 {
        return Err(Error::Validation("init_var must be positive".into()));
    }
    let t_len = residuals.len();
    let mut log_var = vec![init_var.ln(); t_len];
    let z_at = |log_var: &[f64], i: usize| residuals[i] / (0.5 * log_var[i]).exp();
    for t in max_lag..t_len {
        let mut lv = params.omega;
        for (l, a) in params.alpha.iter().enumerate() {
            lv += a * (z_at(&log_var, t - 1 - l).abs() - EXPECTED_ABS_NORMAL);
        }
        for (j, b) in params.beta.iter().enumerate() {
            lv += b * log_var[t - 1 - j];
        }
        for (k, g) in params.gamma.iter().enumerate() {
            let z = z_at(&log_var, t - 1 - k);
            lv += match form {
                ShockForm::SquaredShock => g * z * z,
                ShockForm::SignedShock => g * z,
            };
        }
        if !lv.is_finite() || lv > LOG_VAR_LIMIT {
            return Err(Error::Numeric(format!(
                "log-variance {lv} at t={t}: explosive parameters"
            )));
        }
        log_var[t] = lv;
    }
    Ok(log_var.into_iter().map(|lv| (0.5 * lv).exp()).collect())
}

/// Gaussian log-likelihood of the residuals under filtered volatilities.
pub fn log_likelihood(
    params: &EgarchParams,
    residuals: &[f64],
    init_var: f64,
    form: ShockForm,
) -> Result<f64> {
    let sigma = egarch_filter(params, residuals, init_var, form)?;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    Ok(residuals
        .iter()
        .zip(&sigma)
        .map(|(e, s)| {
            let var = s * s;
            -0.5 * ln_2pi - 0.5 * var.ln() - e * e / (2.0 * var)
        })
        .sum())
}

#[derive(Debug, Clone)]
pub struct EgarchFit {
    pub params: EgarchParams,
    pub vol: VolSeries,
    pub log_likelihood: f64,
    /// Objective values at each multi-start initial point.
    pub start_objectives: Vec<f64>,
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Gaussian quasi-maximum-likelihood EGARCH fit via Nelder-Mead with
/// seeded multi-starts. Deterministic given `seed`; returns the best
/// feasible point (sum of betas < 1, no overflow in the filter).
pub fn fit_egarch(
    returns: &[f64],
    p: usize,
    q: usize,
    seed: u64,
    form: ShockForm,
) -> Result<EgarchFit> {
    if returns.len() < 250 {
        return Err(Error::Validation(format!(
            "need at least 250 observations to fit EGARCH, got {}",
            returns.len()
        )));
    }
    if p == 0 || q == 0 {
        return Err(Error::Validation("EGARCH orders p and q must be >= 1".into()));
    }
    let mu = returns.iter().sum::<f64>() / returns.len() as f64;
    let residuals: Vec<f64> = returns.iter().map(|r| r - mu).collect();
    let init_var = sample_variance(&residuals);
    if init_var <= 0.0 {
        return Err(Error::Validation("returns have zero variance".into()));
    }

    let dim = 1 + p + 2 * q;
    let objective = |v: &[f64]| -> f64 {
        let params = EgarchParams::from_vec(v, p, q);
        if !params.is_stationary() {
            return f64::INFINITY;
        }
        match log_likelihood(&params, &residuals, init_var, form) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut start_objectives = Vec::with_capacity(MULTI_STARTS);
    for _ in 0..MULTI_STARTS {
        let beta_total = rng.gen_range(0.0..0.95);
        let mut x0 = vec![0.0; dim];
        // omega consistent with the unconditional log-variance.
        x0[0] = (1.0 - beta_total) * init_var.ln() + rng.gen_range(-0.1..0.1);
        for i in 0..p {
            x0[1 + i] = rng.gen_range(-0.2..0.2);
        }
        for j in 0..q {
            x0[1 + p + j] = beta_total / q as f64;
        }
        for k in 0..q {
            x0[1 + p + q + k] = rng.gen_range(-0.05..0.05);
        }
        let f0 = objective(&x0);
        start_objectives.push(f0);
        if !f0.is_finite() {
            continue;
        }
        let result = nelder_mead(&objective, &x0, 0.1, 3000, 1e-12);
        if result.fx.is_finite()
            && best.as_ref().map(|(_, fx)| result.fx < *fx).unwrap_or(true)
        {
            best = Some((result.x, result.fx));
        }
    }

    let (x, neg_ll) = best.ok_or_else(|| {
        Error::Numeric("no feasible EGARCH parameter point found across multi-starts".into())
    })?;
    let params = EgarchParams::from_vec(&x, p, q);
    let sigma = egarch_filter(&params, &residuals, init_var, form)?;
    Ok(EgarchFit {
        params,
        vol: VolSeries {
            mu,
            residuals,
            sigma,
        },
        log_likelihood: -neg_ll,
        start_objectives,
    })
}

/// Simulate an EGARCH return series with standard-normal innovations;
/// test and fixture helper.
pub fn simulate_egarch(
    params: &EgarchParams,
    mu: f64,
    t_len: usize,
    seed: u64,
    form: ShockForm,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = NormalDist::new(0.0, 1.0).unwrap();
    let (p, q) = params.order();
    let max_lag = p.max(q);
    let beta_sum: f64 = params.beta.iter().sum();
    let lv0 = params.omega / (1.0 - beta_sum).max(1e-6);

    let mut log_var = vec![lv0; t_len];
    let mut z = vec![0.0_f64; t_len];
    let mut resid = vec![0.0_f64; t_len];
    for t in 0..t_len {
        if t >= max_lag {
            let mut lv = params.omega;
            for (l, a) in params.alpha.iter().enumerate() {
                lv += a * (z[t - 1 - l].abs() - EXPECTED_ABS_NORMAL);
            }
            for (j, b) in params.beta.iter().enumerate() {
                lv += b * log_var[t - 1 - j];
            }
            for (k, g) in params.gamma.iter().enumerate() {
                let zk = z[t - 1 - k];
                lv += match form {
                    ShockForm::SquaredShock => g * zk * zk,
                    ShockForm::SignedShock => g * zk,
                };
            }
            log_var[t] = lv;
        }
        let sigma = (0.5 * log_var[t]).exp();
        z[t] = normal.sample(&mut rng);
        resid[t] = sigma * z[t];
    }
    resid.into_iter().map(|e| mu + e).collect()
}

/// One date's VaR estimate: `var_value = mu - sigma * z_alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarEstimate {
    pub mu: f64,
    pub sigma: f64,
    pub var_value: f64,
    pub confidence: f64,
    pub z_alpha: f64,
}

/// Parametric VaR per date from filtered volatilities.
pub fn compute_var(vol: &VolSeries, confidence: f64) -> Result<Vec<VarEstimate>> {
    if !(confidence > 0.5 && confidence < 1.0) {
        return Err(Error::Validation(format!(
            "confidence level must lie in (0.5, 1), got {confidence}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
    let z = normal.inverse_cdf(confidence);
    Ok(vol
        .sigma
        .iter()
        .map(|s| VarEstimate {
            mu: vol.mu,
            sigma: *s,
            var_value: vol.mu - s * z,
            confidence,
            z_alpha: z,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub coverage_rate: f64,
    /// Mean absolute deviation between predicted and trailing-empirical
    /// VaR; identical to `mae` by construction on the same pairs.
    pub var_loss: f64,
    /// Number of (predicted, trailing-quantile) pairs compared.
    pub pairs: usize,
}

/// Lower empirical quantile with linear interpolation.
/// Linear-interpolated empirical quantile (p in [0, 1]).
pub fn empirical_quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Compare predicted VaR against a trailing empirical-quantile oracle.
/// The "actual" VaR at t is the (1 - confidence) quantile of returns in
/// the trailing `window` (exclusive of t); coverage counts all dates
/// whose realized return did not breach the prediction.
pub fn evaluate_var(
    predicted: &[VarEstimate],
    realized: &[f64],
    window: usize,
) -> Result<VarMetrics> {
    if predicted.len() != realized.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} realized returns",
            predicted.len(),
            realized.len()
        )));
    }
    if window < 20 {
        return Err(Error::Validation("window must be at least 20".into()));
    }
    if window >= realized.len() {
        return Err(Error::Validation(format!(
            "window {window} exceeds series length {}",
            realized.len()
        )));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pairs = 0usize;
    for t in window..realized.len() {
        let tail_p = 1.0 - predicted[t].confidence;
        let actual = empirical_quantile(&realized[t - window..t], tail_p);
        let diff = predicted[t].var_value - actual;
        abs_sum += diff.abs();
        sq_sum += diff * diff;
        pairs += 1;
    }
    let covered = predicted
        .iter()
        .zip(realized)
        .filter(|(v, r)| **r >= v.var_value)
        .count();
    let mae = abs_sum / pairs as f64;
    Ok(VarMetrics {
        rmse: (sq_sum / pairs as f64).sqrt(),
        mae,
        coverage_rate: covered as f64 / realized.len() as f64,
        var_loss: mae,
        pairs,
    })
}

/// Time-series aggregation is the default; this averages per-stock
/// metrics for the cross-sectional reading.
pub fn average_metrics(per_stock: &[VarMetrics]) -> Option<VarMetrics> {
    if per_stock.is_empty() {
        return None;
    }
    let n = per_stock.len() as f64;
    Some(VarMetrics {
        rmse: per_stock.iter().map(|m| m.rmse).sum::<f64>() / n,
        mae: per_stock.iter().map(|m| m.mae).sum::<f64>() / n,
        coverage_rate: per_stock.iter().map(|m| m.coverage_rate).sum::<f64>() / n,
        var_loss: per_stock.iter().map(|m| m.var_loss).sum::<f64>() / n,
        pairs: per_stock.iter().map(|m| m.pairs).sum(),
    })
}
