//! Run configuration: one TOML file drives every pipeline stage, and a
//! digest of its canonical serialization keys the run directory so
//! artifacts from different configs can never be mixed silently.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::TrainConfig;
use crate::error::{Error, Result};
use crate::market_data::ReturnBasis;
use crate::report::LlmRelayConfig;
use crate::risk::ShockForm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub prices: PathBuf,
    pub factors: PathBuf,
    pub news: PathBuf,
    /// Optional precomputed news-feature store; records whose
    /// embedding_id is absent or unresolved fall back to the hashing
    /// encoder.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Optional `date,rf` CSV; missing dates earn zero.
    #[serde(default)]
    pub risk_free: Option<PathBuf>,
}

/// Chronological sample split. A date belongs to the training window
/// iff date <= train_end, to validation iff train_end < date <=
/// validation_end, and to test iff validation_end < date <= test_end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_end: NaiveDate,
    pub validation_end: NaiveDate,
    pub test_end: NaiveDate,
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_end > self.validation_end || self.validation_end > self.test_end {
            return Err(Error::Config(format!(
                "split dates must be ordered: train_end ({}) <= validation_end ({}) <= test_end ({})",
                self.train_end, self.validation_end, self.test_end
            )));
        }
        Ok(())
    }
}

fn default_role_dim() -> usize {
    8
}

fn default_edge_dim() -> usize {
    4
}

/// Dimensions for the fallback hashing encoder and for validating
/// loaded embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(default = "default_role_dim")]
    pub role_dim: usize,
    #[serde(default = "default_edge_dim")]
    pub edge_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            role_dim: default_role_dim(),
            edge_dim: default_edge_dim(),
        }
    }
}

fn default_confidence() -> f64 {
    0.95
}

fn default_var_window() -> usize {
    60
}

fn default_order() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    #[serde(default = "default_order")]
    pub p: usize,
    #[serde(default = "default_order")]
    pub q: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Trailing window for the empirical "actual VaR" oracle.
    #[serde(default = "default_var_window")]
    pub var_window: usize,
    #[serde(default)]
    pub shock_form: ShockForm,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            p: 1,
            q: 1,
            confidence: default_confidence(),
            var_window: default_var_window(),
            shock_form: ShockForm::default(),
        }
    }
}

fn default_cost() -> f64 {
    0.001
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Per-leg transaction cost fraction.
    #[serde(default = "default_cost")]
    pub cost: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            cost: default_cost(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rng_seed: u64,
    #[serde(default)]
    pub return_basis: ReturnBasis,
    /// All stage outputs land under `<output_dir>/run-<config hash>/`.
    pub output_dir: PathBuf,
    pub data: DataPaths,
    pub splits: SplitConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub classifier: TrainConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub backtest: BacktestConfig,
    #[serde(default)]
    pub report: LlmRelayConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.splits.validate()?;
        if self.encoder.role_dim == 0 || self.encoder.edge_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(0.5..1.0).contains(&self.risk.confidence) || self.risk.confidence == 0.5 {
            return Err(Error::Config(format!(
                "VaR confidence must lie in (0.5, 1), got {}",
                self.risk.confidence
            )));
        }
        if self.risk.p == 0 || self.risk.q == 0 {
            return Err(Error::Config("EGARCH orders p and q must be >= 1".into()));
        }
        if self.risk.var_window < 20 {
            return Err(Error::Config("risk.var_window must be at least 20".into()));
        }
        if !(0.0..1.0).contains(&self.backtest.cost) {
            return Err(Error::Config(format!(
                "backtest cost must lie in [0, 1), got {}",
                self.backtest.cost
            )));
        }
        if self.classifier.epochs == 0 {
            log::warn!("classifier.epochs = 0: the model will keep its initial weights");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization. Field order is the
    /// declaration order, so the digest is stable for equal configs.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialization cannot fail");
        hex::encode(Sha256::digest(bytes))
    }

    /// Run directory for this config under `output_dir`.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("run-{}", &self.hash()[..16]))
    }
}
