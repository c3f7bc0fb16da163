//! Quantile discretization of raw features into `u8` bins.

use crate::error::{GbdtError, Result};
use roc_core::{DenseMatrix, Scalar};

/// Bin upper boundaries for one feature: value `x` falls in bin `b` where
/// `b` is the number of edges strictly below `x`. `edges.len() + 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBins {
    pub edges: Vec<f64>,
}

impl FeatureBins {
    pub fn num_bins(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn bin(&self, x: f64) -> u8 {
        self.edges.partition_point(|&e| e < x) as u8
    }

    /// Upper bound of bin `b` (the split threshold "x ≤ value").
    pub fn upper(&self, b: usize) -> f64 {
        self.edges.get(b).copied().unwrap_or(f64::INFINITY)
    }

    /// Rank-based cut points: at most `max_bins - 1` edges, each the
    /// midpoint between two adjacent distinct values.
    pub fn fit(values: &[f64], max_bins: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut distinct: Vec<(f64, usize)> = Vec::new();
        for &v in &sorted {
            match distinct.last_mut() {
                Some((last, count)) if *last == v => *count += 1,
                _ => distinct.push((v, 1)),
            }
        }
        let mut edges = Vec::new();
        if distinct.len() <= max_bins {
            for w in distinct.windows(2) {
                edges.push(midpoint(w[0].0, w[1].0));
            }
            return FeatureBins { edges };
        }
        let n = sorted.len() as f64;
        let mut seen = 0usize;
        let mut next_cut = 1;
        for (i, &(v, count)) in distinct.iter().enumerate().take(distinct.len() - 1) {
            seen += count;
            if seen as f64 >= next_cut as f64 * n / max_bins as f64 {
                edges.push(midpoint(v, distinct[i + 1].0));
                while next_cut < max_bins && seen as f64 >= next_cut as f64 * n / max_bins as f64 {
                    next_cut += 1;
                }
                if edges.len() == max_bins - 1 {
                    break;
                }
            }
        }
        FeatureBins { edges }
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // keep a < edge strictly below b even when the gap is one ulp
    if m < b {
        m
    } else {
        a
    }
}

/// Column-major bin indices plus the edges that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDataset {
    pub features: Vec<FeatureBins>,
    /// `bins[f][i]` is the bin of row `i` in feature `f`.
    pub bins: Vec<Vec<u8>>,
    pub rows: usize,
}

fn check_finite<T: Scalar>(x: &DenseMatrix<T>) -> Result<()> {
    for i in 0..x.rows() {
        if let Some(col) = x.row(i).iter().position(|v| !v.is_finite()) {
            return Err(GbdtError::NonFiniteInput { row: i, col });
        }
    }
    Ok(())
}

/// Fits per-feature quantile edges on `x` and bins it.
pub fn bin_features<T: Scalar>(x: &DenseMatrix<T>, max_bins: usize) -> Result<BinnedDataset> {
    if x.rows() == 0 {
        return Err(GbdtError::InsufficientData { have: 0, need: 1 });
    }
    if !(2..=crate::config::MAX_BINS_LIMIT).contains(&max_bins) {
        return Err(GbdtError::InvalidConfig(format!("max_bins {max_bins}")));
    }
    check_finite(x)?;
    let features = (0..x.cols())
        .map(|f| {
            let col: Vec<f64> = (0..x.rows()).map(|i| x.get(i, f).as_f64()).collect();
            FeatureBins::fit(&col, max_bins)
        })
        .collect();
    BinnedDataset::apply(features, x)
}

impl BinnedDataset {
    /// Bins `x` with already fitted edges.
    pub fn apply<T: Scalar>(features: Vec<FeatureBins>, x: &DenseMatrix<T>) -> Result<Self> {
        if x.cols() != features.len() {
            return Err(GbdtError::DimensionMismatch { expected: features.len(), got: x.cols() });
        }
        check_finite(x)?;
        let bins = features
            .iter()
            .enumerate()
            .map(|(f, fb)| (0..x.rows()).map(|i| fb.bin(x.get(i, f).as_f64())).collect())
            .collect();
        Ok(BinnedDataset { features, bins, rows: x.rows() })
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// Rows `idx` in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        BinnedDataset {
            features: self.features.clone(),
            bins: self.bins.iter().map(|col| idx.iter().map(|&i| col[i]).collect()).collect(),
            rows: idx.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(v: &[f64]) -> DenseMatrix<f64> {
        DenseMatrix::from_vec(v.len(), 1, v.to_vec())
    }

    #[test]
    fn few_distinct_values_get_own_bins() {
        let d = bin_features(&column(&[3.0, 1.0, 2.0, 1.0, 3.0]), 255).unwrap();
        assert_eq!(d.features[0].num_bins(), 3);
        assert_eq!(d.bins[0], vec![2, 0, 1, 0, 2]);
    }

    #[test]
    fn constant_feature_single_bin() {
        let d = bin_features(&column(&[4.0; 6]), 255).unwrap();
        assert_eq!(d.features[0].num_bins(), 1);
        assert!(d.bins[0].iter().all(|&b| b == 0));
    }

    #[test]
    fn many_values_are_capped_and_balanced() {
        let v: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 10_000) as f64).collect();
        let d = bin_features(&column(&v), 255).unwrap();
        let fb = &d.features[0];
        assert!(fb.num_bins() <= 255 && fb.num_bins() > 200, "{}", fb.num_bins());
        assert!(fb.edges.windows(2).all(|w| w[0] < w[1]));
        let mut counts = vec![0usize; fb.num_bins()];
        for &b in &d.bins[0] {
            counts[b as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0 && c < 100), "{counts:?}");
    }

    #[test]
    fn order_preserving() {
        let v = [0.5, -2.0, 9.0, 3.3, 3.3, 1e6];
        let d = bin_features(&column(&v), 4).unwrap();
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] {
                    assert!(d.bins[0][i] <= d.bins[0][j]);
                }
            }
        }
    }

    #[test]
    fn monotone_transform_keeps_assignment() {
        let v: Vec<f64> = (0..2000).map(|i| ((i * 37) % 1000) as f64 / 10.0 - 30.0).collect();
        let t: Vec<f64> = v.iter().map(|x| x.powi(3) + 5.0 * x).collect();
        let a = bin_features(&column(&v), 64).unwrap();
        let b = bin_features(&column(&t), 64).unwrap();
        assert_eq!(a.bins, b.bins);
    }

    #[test]
    fn non_finite_rejected() {
        let err = bin_features(&column(&[1.0, f64::NAN]), 255).unwrap_err();
        assert!(matches!(err, GbdtError::NonFiniteInput { row: 1, col: 0 }));
    }

    #[test]
    fn upper_matches_bin() {
        let fb = FeatureBins { edges: vec![1.0, 2.0] };
        assert_eq!((fb.bin(1.0), fb.bin(1.5), fb.bin(2.0), fb.bin(7.0)), (0, 1, 1, 2));
        assert_eq!(fb.upper(2), f64::INFINITY);
    }
}
