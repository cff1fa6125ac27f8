//! Core library of the FinReport pipeline: market-data alignment, news
//! feature encoding, a 3-class return classifier, FF5 / FF5-News factor
//! construction with GRS testing, EGARCH-based VaR, a one-day-holding
//! backtest, and deterministic per-stock report rendering.

pub mod backtest;
pub mod classifier;
pub mod config;
pub mod error;
pub mod factor_model;
pub mod fixture;
pub mod market_data;
pub mod news_encoding;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod risk;

pub use error::{Error, Result};
