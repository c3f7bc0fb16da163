//! Mini-batch training, prediction and feature extraction over feature
//! windows.

use crate::error::{NnError, Result};
use crate::graph::Graph;
use crate::layers::Mode;
use crate::models::Model;
use crate::optim::Adam;
use crate::serialize::TensorFile;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roc_core::indicators::{FeatureWindow, NormalizationStats};
use roc_core::metrics::Architecture;
use roc_core::{DenseMatrix, Scalar};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a lower mean loss.
    pub patience: Option<usize>,
    /// Cap on optimizer steps per epoch; `None` runs every full batch.
    pub max_batches_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 128, learning_rate: 1e-3, epochs: 100, seed: 0, patience: None, max_batches_per_epoch: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(NnError::InvalidConfig(format!("batch_size {} < 2", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(NnError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!("learning_rate {}", self.learning_rate)));
        }
        if self.max_batches_per_epoch == Some(0) {
            return Err(NnError::InvalidConfig("max_batches_per_epoch must be >= 1".into()));
        }
        Ok(())
    }
}

/// A model after training. The head is fit on standardized targets;
/// [`predict`](Self::predict) maps outputs back to label units.
#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub model: Model<T>,
    pub target_mean: f64,
    pub target_std: f64,
    /// Mean training loss per epoch (standardized units).
    pub loss_history: Vec<f64>,
    /// Optimizer steps taken over the whole run.
    pub steps: usize,
    pub normalization: Option<NormalizationStats<f64>>,
}

pub const INFERENCE_BATCH: usize = 32;

fn batch_tensor<T: Scalar, W: Scalar>(windows: &[&FeatureWindow<W>]) -> Result<Tensor<T>> {
    let first = &windows[0].matrix;
    let (h, w) = (first.rows(), first.cols());
    let mut data = Vec::with_capacity(windows.len() * h * w);
    for win in windows {
        if win.matrix.rows() != h || win.matrix.cols() != w {
            return Err(NnError::ShapeMismatch(format!(
                "window {}×{} in a batch of {h}×{w}",
                win.matrix.rows(),
                win.matrix.cols()
            )));
        }
        data.extend(win.matrix.as_slice().iter().map(|&v| T::lit(v.as_f64())));
    }
    Tensor::new(vec![windows.len(), 1, h, w], data)
}

fn mean_std(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 && std.is_finite() { std } else { 1.0 })
}

fn with_batch_context<R>(r: Result<R>, epoch: usize, batch: usize) -> Result<R> {
    r.map_err(|e| match e {
        NnError::NonFinite { .. } => NnError::NonFiniteLoss { epoch, batch },
        other => other,
    })
}

/// Trains on the labelled windows with seeded shuffling, drop-last batches
/// and Adam. Unlabelled windows are skipped.
pub fn train<T: Scalar, W: Scalar>(mut model: Model<T>, windows: &[FeatureWindow<W>], config: &TrainConfig) -> Result<TrainedModel<T>> {
    config.validate()?;
    let labelled: Vec<&FeatureWindow<W>> = windows.iter().filter(|w| w.label.is_some()).collect();
    if labelled.len() < config.batch_size {
        return Err(NnError::InsufficientData { have: labelled.len(), need: config.batch_size });
    }
    let targets: Vec<f64> = labelled.iter().map(|w| w.label.unwrap().as_f64()).collect();
    let (target_mean, target_std) = mean_std(&targets);
    let scaled: Vec<T> = targets.iter().map(|&y| T::lit((y - target_mean) / target_std)).collect();

    let optimizer = Adam::with_lr(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..labelled.len()).collect();
    let full_batches = labelled.len() / config.batch_size;
    let batches = config.max_batches_per_epoch.map_or(full_batches, |m| m.min(full_batches));
    let mut loss_history = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut steps = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks_exact(config.batch_size).take(batches).enumerate() {
            let batch = b + 1;
            let rows: Vec<&FeatureWindow<W>> = idx.iter().map(|&i| labelled[i]).collect();
            let x = batch_tensor::<T, W>(&rows)?;
            let y = Tensor::new(vec![idx.len(), 1], idx.iter().map(|&i| scaled[i]).collect())?;
            let mut g = Graph::new();
            let xv = g.input(x);
            let yv = g.input(y);
            let mut mode = Mode::train();
            let (_, out) = with_batch_context(model.forward(&mut g, &mut mode, xv), epoch, batch)?;
            let loss = with_batch_context(g.mse_loss(out, yv), epoch, batch)?;
            let value = g.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch });
            }
            g.backward(loss, &mut model.store)?;
            mode.commit(&mut model.store);
            optimizer.step(&mut model.store);
            if model.store.params().iter().any(|p| !p.value.is_finite()) {
                return Err(NnError::NonFiniteLoss { epoch, batch });
            }
            total += value;
            steps += 1;
        }
        let epoch_loss = total / batches as f64;
        loss_history.push(epoch_loss);
        if epoch_loss < best {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if config.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    Ok(TrainedModel { model, target_mean, target_std, loss_history, steps, normalization: None })
}

impl<T: Scalar> TrainedModel<T> {
    pub fn architecture(&self) -> Architecture {
        self.model.architecture()
    }

    /// Pre-head activations in eval mode, one row per window.
    pub fn extract_features<W: Scalar>(&self, windows: &[FeatureWindow<W>]) -> Result<DenseMatrix<T>> {
        let dim = self.model.feature_dim;
        let mut out = Vec::with_capacity(windows.len() * dim);
        for chunk in windows.chunks(INFERENCE_BATCH) {
            let rows: Vec<&FeatureWindow<W>> = chunk.iter().collect();
            let mut g = Graph::new();
            let x = g.input(batch_tensor::<T, W>(&rows)?);
            let f = self.model.features(&mut g, &mut Mode::Eval, x)?;
            out.extend_from_slice(g.value(f).data());
        }
        Ok(DenseMatrix::from_vec(windows.len(), dim, out))
    }

    /// Applies the regression head to extracted features, in label units.
    pub fn head_apply(&self, features: &DenseMatrix<T>) -> Result<Vec<f64>> {
        if features.cols() != self.model.feature_dim {
            return Err(NnError::ShapeMismatch(format!("{} feature columns, model has {}", features.cols(), self.model.feature_dim)));
        }
        if features.rows() == 0 {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![features.rows(), features.cols()], features.as_slice().to_vec())?);
        let y = self.model.head(&mut g, x)?;
        Ok(g.value(y).data().iter().map(|v| v.as_f64() * self.target_std + self.target_mean).collect())
    }

    /// Head outputs for every window, in label units.
    pub fn predict<W: Scalar>(&self, windows: &[FeatureWindow<W>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(INFERENCE_BATCH) {
            let rows: Vec<&FeatureWindow<W>> = chunk.iter().collect();
            let mut g = Graph::new();
            let x = g.input(batch_tensor::<T, W>(&rows)?);
            let (_, y) = self.model.forward(&mut g, &mut Mode::Eval, x)?;
            out.extend(g.value(y).data().iter().map(|v| v.as_f64() * self.target_std + self.target_mean));
        }
        Ok(out)
    }

    pub fn to_tensor_file(&self) -> TensorFile<T> {
        let mut file = self.model.to_tensor_file();
        file.set_meta("target_mean", self.target_mean.to_string());
        file.set_meta("target_std", self.target_std.to_string());
        file.set_meta("steps", self.steps.to_string());
        let hist: Vec<String> = self.loss_history.iter().map(f64::to_string).collect();
        file.set_meta("loss_history", hist.join(","));
        if let Some(n) = &self.normalization {
            file.set_meta("norm.names", n.names.join(","));
            let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
            file.set_meta("norm.min", join(&n.min));
            file.set_meta("norm.max", join(&n.max));
        }
        file
    }

    pub fn from_tensor_file(file: &TensorFile<T>) -> Result<Self> {
        let fmt = |k: &str| NnError::Format(format!("missing or bad {k}"));
        let float = |k: &str| -> Result<f64> { file.meta(k).and_then(|s| s.parse().ok()).ok_or_else(|| fmt(k)) };
        let floats = |k: &str| -> Result<Vec<f64>> {
            let s = file.meta(k).ok_or_else(|| fmt(k))?;
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',').map(|v| v.parse().map_err(|_| fmt(k))).collect()
        };
        let normalization = match file.meta("norm.names") {
            Some(names) => Some(NormalizationStats {
                names: names.split(',').map(str::to_string).collect(),
                min: floats("norm.min")?,
                max: floats("norm.max")?,
            }),
            None => None,
        };
        Ok(TrainedModel {
            model: Model::from_tensor_file(file)?,
            target_mean: float("target_mean")?,
            target_std: float("target_std")?,
            loss_history: floats("loss_history")?,
            steps: file.meta("steps").and_then(|s| s.parse().ok()).ok_or_else(|| fmt("steps"))?,
            normalization,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }

    /// Per-epoch loss as CSV (`epoch,loss`).
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, l));
        }
        s
    }
}
