//! Technical indicator table, min-max normalization, 30×30 windowing and
//! rate-of-change labels.
//!
//! Indicators follow their conventional definitions: Wilder smoothing for
//! RSI and ATR, SMA-seeded EMAs for MACD, 14-bar fast stochastic with 3-bar
//! smoothing. Whenever a ratio degenerates to 0/0 (flat high-low range,
//! zero mean deviation, no price movement at all) the indicator is 0.
//!
//! Rows before [`FeatureTable::valid_from`] hold NaN and never enter a
//! window. Labels always come from raw closes, never the denoised ones.

use crate::marketdata::OhlcColumns;
use crate::matrix::DenseMatrix;
use crate::Scalar;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IndicatorError {
    #[error("series too short: {len} rows, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("empty training range: train_end {train_end} <= valid_from {valid_from}")]
    EmptyTrainRange { train_end: usize, valid_from: usize },
    #[error("feature order differs from the fitted normalization")]
    FeatureOrderMismatch,
    #[error("label array length {labels} differs from table length {rows}")]
    LabelLengthMismatch { labels: usize, rows: usize },
}

pub const FEATURE_NAMES: [&str; 30] = [
    "RSI5", "RSI10", "RSI20", "MACD", "MACDsignal", "MACDhist", "SlowK", "SlowD", "FastK", "FastD",
    "WR5", "WR10", "WR20", "ROC5", "ROC10", "ROC20", "CCI5", "CCI10", "CCI20", "ATR5", "ATR10",
    "ATR20", "NATR5", "NATR10", "NATR20", "TRANGE", "DenoisedOpen", "DenoisedHigh", "DenoisedLow",
    "DenoisedClose",
];
pub const NUM_FEATURES: usize = FEATURE_NAMES.len();

pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;
pub const MACD_SIGNAL: usize = 9;
pub const STOCH_FASTK: usize = 14;
pub const STOCH_SMOOTH: usize = 3;
pub const CCI_CONSTANT: f64 = 0.015;
pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_HORIZON: usize = 5;

/// First index at which every column is defined (the MACD signal line).
pub const WARMUP: usize = MACD_SLOW - 1 + MACD_SIGNAL - 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T> {
    pub names: Vec<String>,
    /// time × feature
    pub values: DenseMatrix<T>,
    pub valid_from: usize,
}

impl<T: Scalar> FeatureTable<T> {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn defined_rows(&self) -> usize {
        self.rows().saturating_sub(self.valid_from)
    }

    pub fn row(&self, t: usize) -> &[T] {
        self.values.row(t)
    }

    pub fn column(&self, name: &str) -> Option<Vec<T>> {
        self.names.iter().position(|n| n == name).map(|j| self.values.column(j))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "index,{}", self.names.join(","))?;
        for t in 0..self.rows() {
            write!(out, "{t}")?;
            for v in self.row(t) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }
}

fn nan_vec<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::nan(); n]
}

/// `num / den`, or 0 when both vanish.
fn ratio_or_zero<T: Scalar>(num: T, den: T) -> T {
    if den == T::zero() {
        T::zero()
    } else {
        num / den
    }
}

fn first_defined<T: Scalar>(x: &[T]) -> usize {
    x.iter().position(|v| !v.is_nan()).unwrap_or(x.len())
}

/// Simple moving average over the defined part of `x`.
pub fn sma<T: Scalar>(x: &[T], period: usize) -> Vec<T> {
    let mut out = nan_vec(x.len());
    let start = first_defined(x);
    let n = T::from_usize(period).unwrap();
    for t in (start + period - 1)..x.len() {
        out[t] = x[t + 1 - period..=t].iter().copied().sum::<T>() / n;
    }
    out
}

/// EMA with `alpha = 2/(period+1)`, seeded by the SMA of the first `period`
/// defined values.
pub fn ema<T: Scalar>(x: &[T], period: usize) -> Vec<T> {
    let alpha = T::lit(2.0) / T::from_usize(period + 1).unwrap();
    smoothed(x, period, |prev, v| prev + alpha * (v - prev))
}

/// Wilder's running average: `(prev·(n−1) + v)/n`, seeded like [`ema`].
pub fn wilder<T: Scalar>(x: &[T], period: usize) -> Vec<T> {
    let n = T::from_usize(period).unwrap();
    smoothed(x, period, |prev, v| (prev * (n - T::one()) + v) / n)
}

fn smoothed<T: Scalar>(x: &[T], period: usize, step: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = nan_vec(x.len());
    let start = first_defined(x);
    let seed_at = start + period - 1;
    if seed_at >= x.len() {
        return out;
    }
    let mut acc = x[start..=seed_at].iter().copied().sum::<T>() / T::from_usize(period).unwrap();
    out[seed_at] = acc;
    for t in seed_at + 1..x.len() {
        acc = step(acc, x[t]);
        out[t] = acc;
    }
    out
}

fn rolling<T: Scalar>(x: &[T], period: usize, pick: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = nan_vec(x.len());
    for t in period - 1..x.len() {
        out[t] = x[t + 1 - period..=t].iter().copied().reduce(&pick).unwrap();
    }
    out
}

pub fn rsi<T: Scalar>(close: &[T], period: usize) -> Vec<T> {
    let mut gains = nan_vec(close.len());
    let mut losses = nan_vec(close.len());
    for t in 1..close.len() {
        let d = close[t] - close[t - 1];
        gains[t] = d.max(T::zero());
        losses[t] = (-d).max(T::zero());
    }
    let g = wilder(&gains, period);
    let l = wilder(&losses, period);
    let hundred = T::lit(100.0);
    g.iter()
        .zip(&l)
        .map(|(&g, &l)| if g.is_nan() { g } else { hundred * ratio_or_zero(g, g + l) })
        .collect()
}

pub struct Macd<T> {
    pub macd: Vec<T>,
    pub signal: Vec<T>,
    pub hist: Vec<T>,
}

pub fn macd<T: Scalar>(close: &[T]) -> Macd<T> {
    let fast = ema(close, MACD_FAST);
    let slow = ema(close, MACD_SLOW);
    let line: Vec<T> = fast.iter().zip(&slow).map(|(&f, &s)| f - s).collect();
    let signal = ema(&line, MACD_SIGNAL);
    let hist = line.iter().zip(&signal).map(|(&m, &s)| m - s).collect();
    Macd { macd: line, signal, hist }
}

pub struct Stochastic<T> {
    pub fast_k: Vec<T>,
    pub fast_d: Vec<T>,
    pub slow_k: Vec<T>,
    pub slow_d: Vec<T>,
}

pub fn stochastic<T: Scalar>(high: &[T], low: &[T], close: &[T]) -> Stochastic<T> {
    let hh = rolling(high, STOCH_FASTK, T::max);
    let ll = rolling(low, STOCH_FASTK, T::min);
    let hundred = T::lit(100.0);
    let fast_k: Vec<T> = (0..close.len())
        .map(|t| {
            if hh[t].is_nan() {
                hh[t]
            } else {
                hundred * ratio_or_zero(close[t] - ll[t], hh[t] - ll[t])
            }
        })
        .collect();
    let fast_d = sma(&fast_k, STOCH_SMOOTH);
    let slow_k = fast_d.clone();
    let slow_d = sma(&slow_k, STOCH_SMOOTH);
    Stochastic { fast_k, fast_d, slow_k, slow_d }
}

/// Williams %R in `[-100, 0]`.
pub fn williams_r<T: Scalar>(high: &[T], low: &[T], close: &[T], period: usize) -> Vec<T> {
    let hh = rolling(high, period, T::max);
    let ll = rolling(low, period, T::min);
    (0..close.len())
        .map(|t| {
            if hh[t].is_nan() {
                hh[t]
            } else {
                -T::lit(100.0) * ratio_or_zero(hh[t] - close[t], hh[t] - ll[t])
            }
        })
        .collect()
}

pub fn roc<T: Scalar>(close: &[T], period: usize) -> Vec<T> {
    let mut out = nan_vec(close.len());
    for t in period..close.len() {
        out[t] = T::lit(100.0) * (close[t] - close[t - period]) / close[t - period];
    }
    out
}

pub fn cci<T: Scalar>(high: &[T], low: &[T], close: &[T], period: usize) -> Vec<T> {
    let three = T::lit(3.0);
    let tp: Vec<T> = (0..close.len()).map(|t| (high[t] + low[t] + close[t]) / three).collect();
    let mean = sma(&tp, period);
    let n = T::from_usize(period).unwrap();
    let mut out = nan_vec(close.len());
    for t in period - 1..close.len() {
        let m = mean[t];
        let dev = tp[t + 1 - period..=t].iter().map(|&v| (v - m).abs()).sum::<T>() / n;
        out[t] = ratio_or_zero(tp[t] - m, T::lit(CCI_CONSTANT) * dev);
    }
    out
}

pub fn true_range<T: Scalar>(high: &[T], low: &[T], close: &[T]) -> Vec<T> {
    let mut out = nan_vec(close.len());
    for t in 1..close.len() {
        let prev = close[t - 1];
        out[t] = (high[t] - low[t]).max((high[t] - prev).abs()).max((low[t] - prev).abs());
    }
    out
}

pub fn atr<T: Scalar>(high: &[T], low: &[T], close: &[T], period: usize) -> Vec<T> {
    wilder(&true_range(high, low, close), period)
}

pub fn natr<T: Scalar>(high: &[T], low: &[T], close: &[T], period: usize) -> Vec<T> {
    atr(high, low, close, period)
        .iter()
        .zip(close)
        .map(|(&a, &c)| T::lit(100.0) * a / c)
        .collect()
}

/// Builds the 30-column table from (usually denoised) prices, in the order
/// of [`FEATURE_NAMES`].
pub fn compute_indicators<T: Scalar>(prices: &OhlcColumns<T>) -> Result<FeatureTable<T>, IndicatorError> {
    let n = prices.len();
    if n <= WARMUP {
        return Err(IndicatorError::SeriesTooShort { len: n, min: WARMUP + 1 });
    }
    let (h, l, c) = (&prices.high[..], &prices.low[..], &prices.close[..]);
    let m = macd(c);
    let st = stochastic(h, l, c);
    let columns: Vec<Vec<T>> = vec![
        rsi(c, 5),
        rsi(c, 10),
        rsi(c, 20),
        m.macd,
        m.signal,
        m.hist,
        st.slow_k,
        st.slow_d,
        st.fast_k,
        st.fast_d,
        williams_r(h, l, c, 5),
        williams_r(h, l, c, 10),
        williams_r(h, l, c, 20),
        roc(c, 5),
        roc(c, 10),
        roc(c, 20),
        cci(h, l, c, 5),
        cci(h, l, c, 10),
        cci(h, l, c, 20),
        atr(h, l, c, 5),
        atr(h, l, c, 10),
        atr(h, l, c, 20),
        natr(h, l, c, 5),
        natr(h, l, c, 10),
        natr(h, l, c, 20),
        true_range(h, l, c),
        prices.open.clone(),
        prices.high.clone(),
        prices.low.clone(),
        prices.close.clone(),
    ];
    debug_assert_eq!(columns.len(), NUM_FEATURES);
    let valid_from = columns.iter().map(|col| first_defined(col)).max().unwrap_or(0);
    debug_assert_eq!(valid_from, WARMUP);

    let mut values = DenseMatrix::zeros(n, NUM_FEATURES);
    for (j, col) in columns.iter().enumerate() {
        for t in 0..n {
            values.set(t, j, if t < valid_from { T::nan() } else { col[t] });
        }
    }
    Ok(FeatureTable { names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(), values, valid_from })
}

/// Per-feature min/max over the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats<T> {
    pub names: Vec<String>,
    pub min: Vec<T>,
    pub max: Vec<T>,
}

/// Fits min/max over rows `[valid_from, train_end)` only.
pub fn fit_normalization<T: Scalar>(
    table: &FeatureTable<T>,
    train_end: usize,
) -> Result<NormalizationStats<T>, IndicatorError> {
    let train_end = train_end.min(table.rows());
    if train_end <= table.valid_from {
        return Err(IndicatorError::EmptyTrainRange { train_end, valid_from: table.valid_from });
    }
    let d = table.names.len();
    let mut min = vec![T::infinity(); d];
    let mut max = vec![T::neg_infinity(); d];
    for t in table.valid_from..train_end {
        for (j, &v) in table.row(t).iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(NormalizationStats { names: table.names.clone(), min, max })
}

impl<T: Scalar> NormalizationStats<T> {
    /// `(x − min)/(max − min)`, or 0 for a feature that was constant in
    /// training. Values outside the training range are not clipped.
    pub fn scale(&self, feature: usize, x: T) -> T {
        let span = self.max[feature] - self.min[feature];
        if span == T::zero() {
            T::zero()
        } else {
            (x - self.min[feature]) / span
        }
    }
}

pub fn apply_normalization<T: Scalar>(
    table: &FeatureTable<T>,
    stats: &NormalizationStats<T>,
) -> Result<FeatureTable<T>, IndicatorError> {
    if table.names != stats.names {
        return Err(IndicatorError::FeatureOrderMismatch);
    }
    let mut values = table.values.clone();
    for t in table.valid_from..table.rows() {
        for (j, v) in values.row_mut(t).iter_mut().enumerate() {
            *v = stats.scale(j, *v);
        }
    }
    Ok(FeatureTable { names: table.names.clone(), values, valid_from: table.valid_from })
}

/// One feature × time image; column `window−1` is bar `end_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow<T> {
    /// features × time steps, oldest first
    pub matrix: DenseMatrix<T>,
    pub end_index: usize,
    pub label: Option<T>,
}

/// Sliding windows with stride 1 over the defined rows. Labels are left
/// empty; see [`attach_labels`].
pub fn make_windows<T: Scalar>(
    table: &FeatureTable<T>,
    window: usize,
) -> Result<Vec<FeatureWindow<T>>, IndicatorError> {
    let defined = table.defined_rows();
    if window == 0 || defined < window {
        return Err(IndicatorError::SeriesTooShort { len: defined, min: window.max(1) });
    }
    let d = table.names.len();
    let windows = (table.valid_from + window - 1..table.rows())
        .map(|end| {
            let start = end + 1 - window;
            let mut matrix = DenseMatrix::zeros(d, window);
            for j in 0..window {
                for (i, &v) in table.row(start + j).iter().enumerate() {
                    matrix.set(i, j, v);
                }
            }
            FeatureWindow { matrix, end_index: end, label: None }
        })
        .collect();
    Ok(windows)
}

/// Sets each window's label from a per-bar label array (see [`make_labels`]).
pub fn attach_labels<T: Scalar>(
    windows: &mut [FeatureWindow<T>],
    labels: &[Option<T>],
) -> Result<(), IndicatorError> {
    if let Some(w) = windows.iter().find(|w| w.end_index >= labels.len()) {
        return Err(IndicatorError::LabelLengthMismatch { labels: labels.len(), rows: w.end_index + 1 });
    }
    for w in windows {
        w.label = labels[w.end_index];
    }
    Ok(())
}

/// `(y[i+h] − y[i]) / y[i]` from raw closes; the last `horizon` positions
/// have no label.
pub fn make_labels<T: Scalar>(raw_close: &[T], horizon: usize) -> Result<Vec<Option<T>>, IndicatorError> {
    if raw_close.len() <= horizon {
        return Err(IndicatorError::SeriesTooShort { len: raw_close.len(), min: horizon + 1 });
    }
    Ok((0..raw_close.len())
        .map(|i| raw_close.get(i + horizon).map(|&ahead| (ahead - raw_close[i]) / raw_close[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cols_from_close(close: Vec<f64>) -> OhlcColumns<f64> {
        OhlcColumns {
            open: close.clone(),
            high: close.iter().map(|c| c + 0.5).collect(),
            low: close.iter().map(|c| c - 0.5).collect(),
            close,
        }
    }

    fn wavy(n: usize) -> OhlcColumns<f64> {
        let close: Vec<f64> = (0..n).map(|i| 100.0 + 3.0 * (i as f64 * 0.3).sin() + 0.01 * i as f64).collect();
        let open: Vec<f64> = std::iter::once(close[0]).chain(close[..n - 1].iter().copied()).collect();
        let high = (0..n).map(|i| open[i].max(close[i]) + 0.2 + 0.1 * (i as f64).cos().abs()).collect();
        let low = (0..n).map(|i| open[i].min(close[i]) - 0.15).collect();
        OhlcColumns { open, high, low, close }
    }

    #[test]
    fn monotone_closes_give_rsi_100() {
        let close: Vec<f64> = (0..60).map(|i| 100.0 + i as f64).collect();
        let t = compute_indicators(&cols_from_close(close)).unwrap();
        for name in ["RSI5", "RSI10", "RSI20"] {
            let col = t.column(name).unwrap();
            assert!(col[t.valid_from..].iter().all(|&v| v == 100.0), "{name}");
        }
        let r = rsi(&(0..25).map(|i| i as f64).collect::<Vec<_>>(), 20);
        assert_eq!(r[20], 100.0);
        assert!(r[19].is_nan());
    }

    #[test]
    fn true_range_degenerates_to_high_low() {
        let tr = true_range(&[10.0, 12.0], &[9.0, 10.5], &[9.5, 11.0]);
        // previous close 9.5 is outside [10.5, 12] here
        assert_eq!(tr[1], 2.5);
        let tr = true_range(&[10.0, 12.0], &[9.0, 10.5], &[11.0, 11.0]);
        assert_eq!(tr[1], 12.0 - 10.5);
    }

    #[test]
    fn roc_doubling() {
        let close = [1.0, 1.2, 1.4, 1.6, 1.8, 2.0];
        assert_eq!(roc(&close, 5)[5], 100.0);
    }

    #[test]
    fn constant_prices_zero_cci() {
        let t = compute_indicators(&cols_from_close(vec![100.0; 50])).unwrap();
        for name in ["CCI5", "CCI10", "CCI20", "MACD", "ROC5"] {
            assert!(t.column(name).unwrap()[t.valid_from..].iter().all(|&v| v == 0.0), "{name}");
        }
        // flat window (high − low = 1 here) still gives finite %R
        assert!(t.column("WR5").unwrap()[t.valid_from..].iter().all(|v| v.is_finite()));
        // degenerate 0/0 RSI
        assert!(t.column("RSI5").unwrap()[t.valid_from..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cci_matches_direct_formula() {
        let p = wavy(40);
        let got = cci(&p.high, &p.low, &p.close, 10);
        let t = 30;
        let tp: Vec<f64> = (t - 9..=t).map(|i| (p.high[i] + p.low[i] + p.close[i]) / 3.0).collect();
        let mean = tp.iter().sum::<f64>() / 10.0;
        let md = tp.iter().map(|v| (v - mean).abs()).sum::<f64>() / 10.0;
        let want = (tp[9] - mean) / (0.015 * md);
        assert!((got[t] - want).abs() < 1e-9);
    }

    #[test]
    fn table_layout() {
        let t = compute_indicators(&wavy(80)).unwrap();
        assert_eq!(t.names.len(), 30);
        assert_eq!(t.valid_from, 33);
        assert!(t.row(32).iter().all(|v| v.is_nan()));
        assert!(t.row(33).iter().all(|v| v.is_finite()));
        assert!(matches!(
            compute_indicators(&wavy(33)).unwrap_err(),
            IndicatorError::SeriesTooShort { len: 33, min: 34 }
        ));
    }

    fn tiny_table(values: Vec<Vec<f64>>) -> FeatureTable<f64> {
        let d = values[0].len();
        FeatureTable {
            names: (0..d).map(|i| format!("f{i}")).collect(),
            values: DenseMatrix::from_rows(&values),
            valid_from: 0,
        }
    }

    #[test]
    fn normalization_examples() {
        let t = tiny_table(vec![vec![0.0, 3.0], vec![10.0, 3.0], vec![5.0, 3.0], vec![20.0, 7.0]]);
        let stats = fit_normalization(&t, 2).unwrap();
        assert_eq!((stats.min[1], stats.max[1]), (3.0, 3.0));
        let n = apply_normalization(&t, &stats).unwrap();
        assert_eq!(n.row(0), &[0.0, 0.0]);
        assert_eq!(n.row(1), &[1.0, 0.0]);
        assert_eq!(n.row(2)[0], 0.5);
        // test value above the training max is not clipped
        assert_eq!(n.row(3)[0], 2.0);
        assert_eq!(n.row(3)[1], 0.0);

        assert!(matches!(fit_normalization(&t, 0), Err(IndicatorError::EmptyTrainRange { .. })));
        let mut other = t.clone();
        other.names.swap(0, 1);
        assert_eq!(apply_normalization(&other, &stats).unwrap_err(), IndicatorError::FeatureOrderMismatch);
    }

    #[test]
    fn window_counts_and_alignment() {
        let rows: Vec<Vec<f64>> = (0..35).map(|t| (0..30).map(|f| (t * 100 + f) as f64).collect()).collect();
        let table = tiny_table(rows.clone());
        let w = make_windows(&table, 30).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(make_windows(&tiny_table(rows[..30].to_vec()), 30).unwrap().len(), 1);
        assert!(make_windows(&tiny_table(rows[..29].to_vec()), 30).is_err());
        for win in &w {
            for i in 0..30 {
                assert_eq!(win.matrix.get(i, 29), table.row(win.end_index)[i]);
                assert_eq!(win.matrix.get(i, 0), table.row(win.end_index - 29)[i]);
            }
        }
        // shift by one
        for pair in w.windows(2) {
            for i in 0..30 {
                for j in 0..29 {
                    assert_eq!(pair[0].matrix.get(i, j + 1), pair[1].matrix.get(i, j));
                }
            }
        }
    }

    #[test]
    fn label_examples() {
        let mut y = vec![100.0f64; 12];
        y[5] = 101.0;
        y[6] = 95.0;
        let l = make_labels(&y, 5).unwrap();
        assert_eq!(l.len(), 12);
        assert!((l[0].unwrap() - 0.01).abs() < 1e-15);
        assert!((l[1].unwrap() + 0.05).abs() < 1e-15);
        assert!(l[7..].iter().all(Option::is_none));
        assert!(make_labels(&[1.0; 8], 5).unwrap()[..3].iter().all(|v| *v == Some(0.0)));
        assert!(make_labels(&[1.0; 5], 5).is_err());
    }

    #[test]
    fn labels_attach_by_end_index() {
        let rows: Vec<Vec<f64>> = (0..32).map(|t| vec![t as f64; 30]).collect();
        let mut w = make_windows(&tiny_table(rows), 30).unwrap();
        let labels: Vec<Option<f64>> = (0..32).map(|i| if i < 31 { Some(i as f64) } else { None }).collect();
        attach_labels(&mut w, &labels).unwrap();
        assert_eq!(w[0].label, Some(29.0));
        assert_eq!(w[2].label, None);
        assert!(attach_labels(&mut w, &labels[..20]).is_err());
    }

    fn arb_prices() -> impl Strategy<Value = OhlcColumns<f64>> {
        prop::collection::vec((-0.02f64..0.02, 0.0f64..0.01, 0.0f64..0.01), 40..120).prop_map(|steps| {
            let mut c = 100.0;
            let mut cols = OhlcColumns { open: vec![], high: vec![], low: vec![], close: vec![] };
            for (r, up, dn) in steps {
                let open = c;
                c *= 1.0 + r;
                cols.open.push(open);
                cols.close.push(c);
                cols.high.push(open.max(c) * (1.0 + up));
                cols.low.push(open.min(c) * (1.0 - dn));
            }
            cols
        })
    }

    proptest! {
        #[test]
        fn indicator_ranges(p in arb_prices()) {
            let t = compute_indicators(&p).unwrap();
            let within = |name: &str, lo: f64, hi: f64| {
                t.column(name).unwrap()[t.valid_from..].iter().all(|&v| v >= lo - 1e-9 && v <= hi + 1e-9)
            };
            for name in ["RSI5", "RSI10", "RSI20", "SlowK", "SlowD", "FastK", "FastD"] {
                prop_assert!(within(name, 0.0, 100.0), "{}", name);
            }
            for name in ["WR5", "WR10", "WR20"] {
                prop_assert!(within(name, -100.0, 0.0), "{}", name);
            }
            for name in ["ATR5", "ATR10", "ATR20", "NATR5", "TRANGE"] {
                prop_assert!(within(name, 0.0, f64::INFINITY), "{}", name);
            }
        }

        #[test]
        fn labels_ignore_denoised_prices(p in arb_prices(), bump in 0.5f64..2.0) {
            let raw = p.close.clone();
            let mut denoised = p.clone();
            denoised.close.iter_mut().for_each(|c| *c *= bump);
            let a = make_labels(&raw, 5).unwrap();
            // the features change, the labels are a function of raw closes only
            prop_assert_ne!(compute_indicators(&denoised).unwrap(), compute_indicators(&p).unwrap());
            prop_assert_eq!(a, make_labels(&raw, 5).unwrap());
        }

        #[test]
        fn train_windows_unaffected_by_test_rows(p in arb_prices(), extra in 1usize..30) {
            let full = compute_indicators(&p).unwrap();
            let train_end = p.len() - extra.min(p.len() - 35);
            prop_assume!(train_end >= full.valid_from + 30);
            let s1 = fit_normalization(&full, train_end).unwrap();
            let trunc = compute_indicators(&p.head(train_end)).unwrap();
            let s2 = fit_normalization(&trunc, train_end).unwrap();
            prop_assert_eq!(&s1, &s2);
            let w1 = make_windows(&apply_normalization(&full, &s1).unwrap(), 30).unwrap();
            let w2 = make_windows(&apply_normalization(&trunc, &s2).unwrap(), 30).unwrap();
            prop_assert_eq!(&w1[..w2.len()], &w2[..]);
            for w in &w2 {
                prop_assert!(w.matrix.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
