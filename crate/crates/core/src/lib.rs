//! Data preparation and scoring for five-bar-ahead rate-of-change forecasting:
//! OHLC ingestion, periodized wavelet denoising, a 30-column technical
//! indicator table cut into 30×30 windows, and MAE/MSE/RMSE reporting.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below name the double-precision instantiations used by the
//! command-line pipeline.

pub mod indicators;
pub mod marketdata;
pub mod matrix;
pub mod metrics;
pub mod scalar;
pub mod wavelet;

pub use matrix::DenseMatrix;
pub use scalar::{MatRef, Scalar};

pub type OhlcSeries64 = marketdata::OhlcSeries<f64>;
pub type OhlcColumns64 = marketdata::OhlcColumns<f64>;
pub type WaveletSpec64 = wavelet::WaveletSpec<f64>;
pub type FeatureTable64 = indicators::FeatureTable<f64>;
pub type FeatureWindow64 = indicators::FeatureWindow<f64>;
pub type FeatureWindow32 = indicators::FeatureWindow<f32>;
pub type Matrix64 = DenseMatrix<f64>;
