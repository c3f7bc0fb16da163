//! Binary intermediate files for the staged commands: labelled windows with
//! their split, and extracted feature matrices. Both use the tensor file
//! container (magic + format version).

use crate::error::{HarnessError, Result, Stage, StageExt};
use crate::pipeline::PreparedData;
use roc_core::indicators::{FeatureWindow, NormalizationStats};
use roc_core::DenseMatrix;
use roc_nn::{Tensor, TensorFile};
use std::path::Path;

const WINDOWS_KIND: &str = "windows";
const FEATURES_KIND: &str = "features";

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn split<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|x| x.parse().ok()).collect()
}

fn bad(what: &str) -> HarnessError {
    HarnessError::Stage { stage: Stage::Ingest, source: format!("artifact: missing or bad {what}").into() }
}

fn tensor(data: Vec<f64>, shape: Vec<usize>) -> Tensor<f64> {
    Tensor::new(shape, data).expect("shape matches data")
}

pub fn save_prepared(data: &PreparedData, path: &Path) -> Result<()> {
    let mut f = TensorFile::<f64>::new();
    f.set_meta("kind", WINDOWS_KIND);
    f.set_meta("denoised", data.denoised.to_string());
    f.set_meta("train_end", data.train_end.to_string());
    f.set_meta("horizon", data.horizon.to_string());
    f.set_meta("end_indices", join(&data.end_indices(&(0..data.windows.len()).collect::<Vec<_>>())));
    f.set_meta("train", join(&data.train));
    f.set_meta("test", join(&data.test));
    f.set_meta("timestamps", join(&data.timestamps));
    f.set_meta("norm.names", data.stats.names.join(","));
    let (h, w) = data.windows.first().map_or((0, 0), |x| (x.matrix.rows(), x.matrix.cols()));
    let mut flat = Vec::with_capacity(data.windows.len() * h * w);
    for win in &data.windows {
        flat.extend_from_slice(win.matrix.as_slice());
    }
    f.push("windows", tensor(flat, vec![data.windows.len(), h, w]));
    f.push("labels", tensor(data.windows.iter().map(|w| w.label.unwrap_or(f64::NAN)).collect(), vec![data.windows.len()]));
    f.push("raw_close", tensor(data.raw_close.clone(), vec![data.raw_close.len()]));
    f.push("norm.min", tensor(data.stats.min.clone(), vec![data.stats.min.len()]));
    f.push("norm.max", tensor(data.stats.max.clone(), vec![data.stats.max.len()]));
    f.save(path).stage(Stage::Output)
}

pub fn load_prepared(path: &Path) -> Result<PreparedData> {
    let f = TensorFile::<f64>::load(path).stage(Stage::Ingest)?;
    if f.meta("kind") != Some(WINDOWS_KIND) {
        return Err(bad("kind (expected a windows file)"));
    }
    let meta = |k: &str| f.meta(k).ok_or_else(|| bad(k));
    let parse = |k: &str| -> Result<usize> { meta(k)?.parse().map_err(|_| bad(k)) };
    let get = |k: &str| f.get(k).ok_or_else(|| bad(k));
    let windows_t = get("windows")?;
    let shape = windows_t.shape().to_vec();
    let (n, h, w) = (shape[0], shape[1], shape[2]);
    let labels = get("labels")?.data();
    let ends: Vec<usize> = split(meta("end_indices")?).ok_or_else(|| bad("end_indices"))?;
    if ends.len() != n || labels.len() != n {
        return Err(bad("window count"));
    }
    let windows = (0..n)
        .map(|i| FeatureWindow {
            matrix: DenseMatrix::from_vec(h, w, windows_t.data()[i * h * w..(i + 1) * h * w].to_vec()),
            end_index: ends[i],
            label: Some(labels[i]).filter(|v| !v.is_nan()),
        })
        .collect();
    Ok(PreparedData {
        denoised: meta("denoised")? == "true",
        train_end: parse("train_end")?,
        horizon: parse("horizon")?,
        timestamps: split(meta("timestamps")?).ok_or_else(|| bad("timestamps"))?,
        raw_close: get("raw_close")?.data().to_vec(),
        stats: NormalizationStats {
            names: meta("norm.names")?.split(',').map(str::to_string).collect(),
            min: get("norm.min")?.data().to_vec(),
            max: get("norm.max")?.data().to_vec(),
        },
        windows,
        train: split(meta("train")?).ok_or_else(|| bad("train"))?,
        test: split(meta("test")?).ok_or_else(|| bad("test"))?,
    })
}

/// CNN features for the train and test windows of a windows file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub train: DenseMatrix<f64>,
    pub test: DenseMatrix<f64>,
}

pub fn save_features(set: &FeatureSet, path: &Path) -> Result<()> {
    let mut f = TensorFile::<f64>::new();
    f.set_meta("kind", FEATURES_KIND);
    for (name, m) in [("train", &set.train), ("test", &set.test)] {
        f.push(name, tensor(m.as_slice().to_vec(), vec![m.rows(), m.cols()]));
    }
    f.save(path).stage(Stage::Output)
}

pub fn load_features(path: &Path) -> Result<FeatureSet> {
    let f = TensorFile::<f64>::load(path).stage(Stage::Ingest)?;
    if f.meta("kind") != Some(FEATURES_KIND) {
        return Err(bad("kind (expected a features file)"));
    }
    let matrix = |name: &str| -> Result<DenseMatrix<f64>> {
        let t = f.get(name).ok_or_else(|| bad(name))?;
        Ok(DenseMatrix::from_vec(t.shape()[0], t.shape()[1], t.data().to_vec()))
    };
    Ok(FeatureSet { train: matrix("train")?, test: matrix("test")? })
}
