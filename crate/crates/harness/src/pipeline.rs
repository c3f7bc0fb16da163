//! Denoise → indicators → normalization → windows → CNN → (GBDT) → report.

use crate::config::{DataConfig, HarnessConfig, Precision};
use crate::error::{HarnessError, Result, Stage, StageExt};
use roc_core::indicators::{
    apply_normalization, attach_labels, compute_indicators, fit_normalization, make_labels, make_windows,
    FeatureTable, FeatureWindow, NormalizationStats,
};
use roc_core::marketdata::{self, OhlcColumns, OhlcSeries};
use roc_core::metrics::{Architecture, EvalReport, Variant};
use roc_core::wavelet::{denoise, WaveletSpec};
use roc_core::{DenseMatrix, Scalar};
use roc_gbdt::{assemble_design_matrix, GbdtModel};
use roc_nn::{Model, TensorFile, TrainedModel};
use sha2::{Digest, Sha256};
use std::path::Path;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The configured CSV, or synthetic bars when no input is set.
pub fn load_series(config: &HarnessConfig) -> Result<OhlcSeries<f64>> {
    match &config.data.input {
        Some(path) => marketdata::load_csv(path).stage(Stage::Ingest),
        None => crate::synth::generate(&config.synth, config.seed),
    }
}

/// First test bar: `data.train_bars` if set, else `floor(n · train_fraction)`.
pub fn train_end(len: usize, data: &DataConfig) -> Result<usize> {
    let end = match data.train_bars {
        Some(b) => b,
        None => marketdata::split_index(len, data.train_fraction).stage(Stage::Ingest)?,
    };
    if end == 0 || end >= len {
        return Err(HarnessError::Config(format!("train/test boundary {end} outside a series of {len} bars")));
    }
    Ok(end)
}

/// OHLC with every column passed through the wavelet filter.
pub fn denoise_columns(columns: &OhlcColumns<f64>, zeroed_levels: usize) -> Result<OhlcColumns<f64>> {
    let spec = WaveletSpec::<f64>::sym15();
    columns.try_map(|c| denoise(c, &spec, zeroed_levels)).stage(Stage::Denoise)
}

/// Unnormalized indicator table from raw or denoised prices.
pub fn indicator_table(series: &OhlcSeries<f64>, data: &DataConfig, denoised: bool) -> Result<FeatureTable<f64>> {
    let raw = series.columns();
    let prices = if denoised { denoise_columns(&raw, data.zeroed_levels)? } else { raw };
    compute_indicators(&prices).stage(Stage::Features)
}

/// Everything downstream of the price series for one denoise setting.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub denoised: bool,
    pub train_end: usize,
    pub horizon: usize,
    pub timestamps: Vec<i64>,
    pub raw_close: Vec<f64>,
    pub stats: NormalizationStats<f64>,
    pub windows: Vec<FeatureWindow<f64>>,
    /// Windows whose label lies entirely before `train_end`.
    pub train: Vec<usize>,
    /// Labelled windows ending at or after `train_end`.
    pub test: Vec<usize>,
}

impl PreparedData {
    pub fn train_windows(&self) -> Vec<FeatureWindow<f64>> {
        self.train.iter().map(|&i| self.windows[i].clone()).collect()
    }

    pub fn test_windows(&self) -> Vec<FeatureWindow<f64>> {
        self.test.iter().map(|&i| self.windows[i].clone()).collect()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.windows[i].label.expect("split windows are labelled")).collect()
    }

    pub fn end_indices(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.windows[i].end_index).collect()
    }

    /// Normalized indicator row at each window's last bar.
    pub fn indicator_rows(&self, idx: &[usize]) -> DenseMatrix<f64> {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let m = &self.windows[i].matrix;
                m.column(m.cols() - 1)
            })
            .collect();
        let cols = self.windows.first().map_or(0, |w| w.matrix.rows());
        DenseMatrix::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn stats_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for n in &self.stats.names {
            out.extend_from_slice(n.as_bytes());
            out.push(0);
        }
        for v in self.stats.min.iter().chain(&self.stats.max) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

pub fn prepare(series: &OhlcSeries<f64>, data: &DataConfig, denoised: bool) -> Result<PreparedData> {
    let n = series.len();
    let train_end = train_end(n, data)?;
    let table = indicator_table(series, data, denoised)?;
    let stats = fit_normalization(&table, train_end).stage(Stage::Features)?;
    let normalized = apply_normalization(&table, &stats).stage(Stage::Features)?;
    let mut windows = make_windows(&normalized, data.window).stage(Stage::Features)?;
    let raw_close = series.closes();
    let labels = make_labels(&raw_close, data.horizon).stage(Stage::Features)?;
    attach_labels(&mut windows, &labels).stage(Stage::Features)?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        if w.label.is_none() {
            continue;
        }
        if w.end_index + data.horizon < train_end {
            train.push(i);
        } else if w.end_index >= train_end {
            test.push(i);
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(HarnessError::Stage {
            stage: Stage::Features,
            source: format!("{} train and {} test windows; need both", train.len(), test.len()).into(),
        });
    }
    Ok(PreparedData {
        denoised,
        train_end,
        horizon: data.horizon,
        timestamps: series.timestamps(),
        raw_close,
        stats,
        windows,
        train,
        test,
    })
}

/// A trained CNN in either precision.
#[derive(Debug, Clone)]
pub enum TrainedCnn {
    F32(TrainedModel<f32>),
    F64(TrainedModel<f64>),
}

fn to_f64<T: Scalar>(m: DenseMatrix<T>) -> DenseMatrix<f64> {
    let (r, c) = (m.rows(), m.cols());
    DenseMatrix::from_vec(r, c, m.into_vec().into_iter().map(|v| v.as_f64()).collect())
}

fn from_f64<T: Scalar>(m: &DenseMatrix<f64>) -> DenseMatrix<T> {
    DenseMatrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|&v| T::lit(v)).collect())
}

fn train_typed<T: Scalar>(
    config: &HarnessConfig,
    arch: Architecture,
    windows: &[FeatureWindow<f64>],
    stats: &NormalizationStats<f64>,
) -> Result<TrainedModel<T>> {
    let model = match arch {
        Architecture::Resnet => Model::resnet(config.cnn.resnet(config.data.window), config.seed).stage(Stage::TrainCnn)?,
        Architecture::PlainCnn => Model::plain_cnn_with(1, config.cnn.feature_dim, config.seed),
    };
    let mut trained = roc_nn::train(model, windows, &config.cnn.train_config(config.seed)).stage(Stage::TrainCnn)?;
    trained.normalization = Some(stats.clone());
    Ok(trained)
}

impl TrainedCnn {
    pub fn train(config: &HarnessConfig, arch: Architecture, data: &PreparedData) -> Result<Self> {
        let windows = data.train_windows();
        Ok(match config.cnn.precision {
            Precision::F32 => TrainedCnn::F32(train_typed(config, arch, &windows, &data.stats)?),
            Precision::F64 => TrainedCnn::F64(train_typed(config, arch, &windows, &data.stats)?),
        })
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            TrainedCnn::F32(m) => m.architecture(),
            TrainedCnn::F64(m) => m.architecture(),
        }
    }

    pub fn loss_history(&self) -> &[f64] {
        match self {
            TrainedCnn::F32(m) => &m.loss_history,
            TrainedCnn::F64(m) => &m.loss_history,
        }
    }

    pub fn extract(&self, windows: &[FeatureWindow<f64>]) -> Result<DenseMatrix<f64>> {
        match self {
            TrainedCnn::F32(m) => m.extract_features(windows).map(to_f64),
            TrainedCnn::F64(m) => m.extract_features(windows),
        }
        .stage(Stage::Extract)
    }

    pub fn head(&self, features: &DenseMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            TrainedCnn::F32(m) => m.head_apply(&from_f64(features)),
            TrainedCnn::F64(m) => m.head_apply(features),
        }
        .stage(Stage::Evaluate)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            TrainedCnn::F32(m) => m.to_tensor_file().to_bytes(),
            TrainedCnn::F64(m) => m.to_tensor_file().to_bytes(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()).stage(Stage::Output)
    }

    /// Loads a model file of either precision.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path).stage(Stage::Ingest)?;
        if let Ok(f) = TensorFile::<f32>::from_bytes(&bytes) {
            return TrainedModel::from_tensor_file(&f).map(TrainedCnn::F32).stage(Stage::Ingest);
        }
        let f = TensorFile::<f64>::from_bytes(&bytes).stage(Stage::Ingest)?;
        TrainedModel::from_tensor_file(&f).map(TrainedCnn::F64).stage(Stage::Ingest)
    }
}

/// A trained CNN with features for the train and test windows.
#[derive(Debug, Clone)]
pub struct CnnRun {
    pub cnn: TrainedCnn,
    pub train_features: DenseMatrix<f64>,
    pub test_features: DenseMatrix<f64>,
}

impl CnnRun {
    pub fn new(config: &HarnessConfig, arch: Architecture, data: &PreparedData) -> Result<Self> {
        let cnn = TrainedCnn::train(config, arch, data)?;
        let train_features = cnn.extract(&data.train_windows())?;
        let test_features = cnn.extract(&data.test_windows())?;
        Ok(CnnRun { cnn, train_features, test_features })
    }
}

/// Predictions and score of one variant.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub report: EvalReport,
    pub predictions: Vec<f64>,
    pub gbdt: Option<GbdtModel>,
    /// Width of the boosted design matrix, when one was built.
    pub design_width: Option<usize>,
}

/// Scores `variant` from an already trained CNN. The CNN's architecture and
/// the data's denoise flag must match the variant.
pub fn run_variant(config: &HarnessConfig, variant: Variant, data: &PreparedData, cnn: &CnnRun) -> Result<VariantOutcome> {
    let (denoised, arch, use_gbdt) = variant.flags();
    if denoised != data.denoised || arch != cnn.cnn.architecture() {
        return Err(HarnessError::Config(format!("{variant} needs denoise={denoised}, {arch:?}")));
    }
    let truth = data.labels(&data.test);
    let (predictions, gbdt, design_width) = if use_gbdt {
        let train_x = assemble_design_matrix(&cnn.train_features, &data.indicator_rows(&data.train)).stage(Stage::TrainGbdt)?;
        let test_x = assemble_design_matrix(&cnn.test_features, &data.indicator_rows(&data.test)).stage(Stage::Evaluate)?;
        let model = roc_gbdt::fit(&train_x, &data.labels(&data.train), &config.gbdt).stage(Stage::TrainGbdt)?;
        let pred = model.predict(&test_x).stage(Stage::Evaluate)?;
        (pred, Some(model), Some(train_x.cols()))
    } else {
        (cnn.cnn.head(&cnn.test_features)?, None, None)
    };
    let report = EvalReport::new(variant, &predictions, &truth).stage(Stage::Evaluate)?;
    Ok(VariantOutcome { variant, report, predictions, gbdt, design_width })
}

/// One variant end to end on `series`.
pub fn run_experiment(config: &HarnessConfig, series: &OhlcSeries<f64>, variant: Variant) -> Result<VariantOutcome> {
    let data = prepare(series, &config.data, variant.denoise())?;
    let cnn = CnnRun::new(config, variant.architecture(), &data)?;
    run_variant(config, variant, &data, &cnn)
}
