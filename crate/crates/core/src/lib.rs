//! Scale-invariant pattern recognition and learnable wavelet tokenization
//! for financial time series, with a cross-sectional backtesting harness.

pub mod backtest;
pub mod cli;
pub mod config;
pub mod dtw;
pub mod sipr;
pub mod swt;
pub mod synth;
pub mod error;
pub mod panel;
pub mod patch;
pub mod predictor;

pub use error::{Error, Result};
