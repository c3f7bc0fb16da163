//! Experiment driver for the rate-of-change forecasting pipeline: run
//! configuration, synthetic data, per-variant runs, the eight-variant
//! ablation, and plot-ready CSV exports.

pub mod ablation;
pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plot;
pub mod synth;

pub use ablation::{run_ablation, AblationResult};
pub use config::{HarnessConfig, Precision, Preset};
pub use error::{HarnessError, Result, Stage};
pub use pipeline::{prepare, run_experiment, run_variant, CnnRun, PreparedData, TrainedCnn, VariantOutcome};
pub use plot::{emit_plot_data, reconstruct_prices, OverlayRow};
pub use synth::{generate, SynthConfig};

pub type Series64 = roc_core::marketdata::OhlcSeries<f64>;
