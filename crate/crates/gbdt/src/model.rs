use crate::binning::FeatureBins;
use crate::config::GbdtConfig;
use crate::error::{GbdtError, Result};
use crate::tree::RegressionTree;
use roc_core::{DenseMatrix, Scalar};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxRounds,
    EarlyStopping,
    /// A round found no admissible split with positive gain.
    NoSplit,
}

/// `prediction = base_score + Σ learning_rate · tree_k(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format_version: u32,
    pub config: GbdtConfig,
    pub base_score: f64,
    pub learning_rate: f64,
    pub num_features: usize,
    pub bin_edges: Vec<Vec<f64>>,
    pub trees: Vec<RegressionTree>,
    pub best_iteration: Option<usize>,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
    pub stop_reason: StopReason,
    pub num_bundles: usize,
}

impl GbdtModel {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn feature_bins(&self) -> Vec<FeatureBins> {
        self.bin_edges.iter().map(|e| FeatureBins { edges: e.clone() }).collect()
    }

    pub fn predict_row<T: Scalar>(&self, x: &[T]) -> Result<f64> {
        if x.len() != self.num_features {
            return Err(GbdtError::DimensionMismatch { expected: self.num_features, got: x.len() });
        }
        let row: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
        Ok(self.predict_f64(&row))
    }

    fn predict_f64(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| self.learning_rate * t.predict_raw(row)).sum::<f64>()
    }

    pub fn predict<T: Scalar>(&self, x: &DenseMatrix<T>) -> Result<Vec<f64>> {
        if x.cols() != self.num_features {
            return Err(GbdtError::DimensionMismatch { expected: self.num_features, got: x.cols() });
        }
        let mut row = vec![0.0; x.cols()];
        Ok(x.iter_rows()
            .map(|r| {
                for (dst, v) in row.iter_mut().zip(r) {
                    *dst = v.as_f64();
                }
                self.predict_f64(&row)
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let h: Header = serde_json::from_str(s)?;
        if h.format_version != FORMAT_VERSION {
            return Err(GbdtError::FormatVersion(h.format_version));
        }
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Human-readable listing of every split and leaf.
    pub fn dump(&self, names: Option<&[String]>) -> String {
        let mut out = format!(
            "gbdt v{} base_score={:.6e} learning_rate={} trees={} features={} stop={:?}\n",
            self.format_version,
            self.base_score,
            self.learning_rate,
            self.trees.len(),
            self.num_features,
            self.stop_reason
        );
        for (k, t) in self.trees.iter().enumerate() {
            out.push_str(&format!("tree {k} leaves={} depth={}\n", t.num_leaves(), t.depth()));
            t.dump(&mut out, names);
        }
        out
    }
}

/// Image features followed by indicator columns: `[0, f)` CNN features,
/// `[f, f + k)` indicators in table order.
pub fn assemble_design_matrix<T: Scalar>(image: &DenseMatrix<T>, indicators: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if image.rows() != indicators.rows() {
        return Err(GbdtError::RowCountMismatch { left: image.rows(), right: indicators.rows() });
    }
    let cols = image.cols() + indicators.cols();
    let mut data = Vec::with_capacity(image.rows() * cols);
    for (a, b) in image.iter_rows().zip(indicators.iter_rows()) {
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    Ok(DenseMatrix::from_vec(image.rows(), cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Node;

    fn stump() -> GbdtModel {
        GbdtModel {
            format_version: FORMAT_VERSION,
            config: GbdtConfig::default(),
            base_score: 1.0,
            learning_rate: 0.5,
            num_features: 2,
            bin_edges: vec![vec![0.5], vec![]],
            trees: vec![RegressionTree {
                nodes: vec![
                    Node::Split { feature: 0, threshold_bin: 0, threshold: 0.5, gain: 1.0, left: 1, right: 2 },
                    Node::Leaf { value: -2.0, count: 3 },
                    Node::Leaf { value: 4.0, count: 3 },
                ],
            }],
            best_iteration: None,
            train_loss: vec![],
            valid_loss: vec![],
            stop_reason: StopReason::MaxRounds,
            num_bundles: 2,
        }
    }

    #[test]
    fn known_leaves() {
        let m = stump();
        assert_eq!(m.predict_row(&[0.0, 9.0]).unwrap(), 0.0);
        assert_eq!(m.predict_row(&[0.5, 9.0]).unwrap(), 0.0);
        assert_eq!(m.predict_row(&[0.6f32, 9.0]).unwrap(), 3.0);
        let mut empty = stump();
        empty.trees.clear();
        assert_eq!(empty.predict_row(&[7.0, 7.0]).unwrap(), 1.0);
    }

    #[test]
    fn dimension_checked() {
        let m = stump();
        assert!(matches!(m.predict_row(&[1.0]), Err(GbdtError::DimensionMismatch { expected: 2, got: 1 })));
        let x = DenseMatrix::<f64>::zeros(3, 3);
        assert!(m.predict(&x).is_err());
    }

    #[test]
    fn json_round_trip_and_version() {
        let m = stump();
        let s = m.to_json().unwrap();
        assert_eq!(GbdtModel::from_json(&s).unwrap(), m);
        let bumped = s.replacen("\"format_version\":1", "\"format_version\":9", 1);
        assert!(matches!(GbdtModel::from_json(&bumped), Err(GbdtError::FormatVersion(9))));
        assert!(m.dump(None).contains("f0 <= 5.000000e-1"));
    }

    #[test]
    fn design_matrix_layout() {
        let img = DenseMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let ind = DenseMatrix::from_vec(2, 2, vec![7.0, 8.0, 9.0, 10.0]);
        let x = assemble_design_matrix(&img, &ind).unwrap();
        assert_eq!(x.cols(), 5);
        assert_eq!(x.row(1), &[4.0, 5.0, 6.0, 9.0, 10.0]);
        assert_eq!(x.column(3), ind.column(0));
        let empty = assemble_design_matrix(&DenseMatrix::<f64>::zeros(0, 1024), &DenseMatrix::zeros(0, 30)).unwrap();
        assert_eq!((empty.rows(), empty.cols()), (0, 1054));
        assert!(matches!(
            assemble_design_matrix(&img, &DenseMatrix::zeros(3, 2)),
            Err(GbdtError::RowCountMismatch { left: 2, right: 3 })
        ));
    }
}
