//! MAE / MSE / RMSE and the scaled comparison-table report.
//!
//! Metric values are unscaled internally; only [`EvalReport`] carries the
//! ×10³ / ×10⁶ / ×10³ display units.

use crate::Scalar;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction length {pred} differs from truth length {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("cannot score an empty set")]
    Empty,
    #[error("rmse and mse disagree: ({rmse})² != {mse}")]
    Inconsistent { rmse: f64, mse: f64 },
    #[error("unknown variant tag {0:?}")]
    UnknownVariant(String),
}

fn check<T>(pred: &[T], truth: &[T]) -> Result<(), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn mae<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, MetricsError> {
    check(pred, truth)?;
    let s: T = pred.iter().zip(truth).map(|(&p, &y)| (p - y).abs()).sum();
    Ok(s / T::from_usize(pred.len()).unwrap())
}

pub fn mse<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, MetricsError> {
    check(pred, truth)?;
    let s: T = pred.iter().zip(truth).map(|(&p, &y)| (y - p) * (y - p)).sum();
    Ok(s / T::from_usize(pred.len()).unwrap())
}

pub fn rmse<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, MetricsError> {
    mse(pred, truth).map(T::sqrt)
}

/// The eight ablation variants, in comparison-table row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    TC,
    DTC,
    TCL,
    DTCL,
    RN,
    DRN,
    RNL,
    DRNL,
}

/// Feature extractor family of a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    PlainCnn,
    Resnet,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::TC,
        Variant::DTC,
        Variant::TCL,
        Variant::DTCL,
        Variant::RN,
        Variant::DRN,
        Variant::RNL,
        Variant::DRNL,
    ];

    /// `(denoise, architecture, use_gbdt)`
    pub fn flags(self) -> (bool, Architecture, bool) {
        use Architecture::*;
        match self {
            Variant::TC => (false, PlainCnn, false),
            Variant::DTC => (true, PlainCnn, false),
            Variant::TCL => (false, PlainCnn, true),
            Variant::DTCL => (true, PlainCnn, true),
            Variant::RN => (false, Resnet, false),
            Variant::DRN => (true, Resnet, false),
            Variant::RNL => (false, Resnet, true),
            Variant::DRNL => (true, Resnet, true),
        }
    }

    pub fn from_flags(denoise: bool, architecture: Architecture, use_gbdt: bool) -> Variant {
        *Variant::ALL
            .iter()
            .find(|v| v.flags() == (denoise, architecture, use_gbdt))
            .expect("every flag combination has a variant")
    }

    pub fn denoise(self) -> bool {
        self.flags().0
    }

    pub fn architecture(self) -> Architecture {
        self.flags().1
    }

    pub fn use_gbdt(self) -> bool {
        self.flags().2
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::TC => "TC",
            Variant::DTC => "DTC",
            Variant::TCL => "TCL",
            Variant::DTCL => "DTCL",
            Variant::RN => "RN",
            Variant::DRN => "DRN",
            Variant::RNL => "RNL",
            Variant::DRNL => "DRNL",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| MetricsError::UnknownVariant(s.to_string()))
    }
}

/// One comparison-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: Variant,
    /// MAE × 10³
    pub mae_e3: f64,
    /// MSE × 10⁶
    pub mse_e6: f64,
    /// RMSE × 10³
    pub rmse_e3: f64,
    pub n: usize,
}

const CONSISTENCY_TOL: f64 = 1e-9;

impl EvalReport {
    /// Scores `pred` against `truth`.
    pub fn new<T: Scalar>(tag: Variant, pred: &[T], truth: &[T]) -> Result<Self, MetricsError> {
        let a = mae(pred, truth)?.as_f64();
        let s = mse(pred, truth)?.as_f64();
        Self::from_scaled(tag, a * 1e3, s * 1e6, s.sqrt() * 1e3, pred.len())
    }

    /// Builds a row from already-scaled values, enforcing
    /// `(rmse_e3·10⁻³)² = mse_e6·10⁻⁶`.
    pub fn from_scaled(
        tag: Variant,
        mae_e3: f64,
        mse_e6: f64,
        rmse_e3: f64,
        n: usize,
    ) -> Result<Self, MetricsError> {
        let lhs = (rmse_e3 * 1e-3).powi(2);
        let rhs = mse_e6 * 1e-6;
        if (lhs - rhs).abs() > CONSISTENCY_TOL * lhs.abs().max(rhs.abs()) {
            return Err(MetricsError::Inconsistent { rmse: rmse_e3 * 1e-3, mse: rhs });
        }
        Ok(EvalReport { tag, mae_e3, mse_e6, rmse_e3, n })
    }

    pub fn mse(&self) -> f64 {
        self.mse_e6 * 1e-6
    }

    /// `"MAE / MSE / RMSE"` in table units.
    pub fn render(&self) -> String {
        render_metrics(self.mae_e3, self.mse_e6, self.rmse_e3)
    }
}

/// Renders scaled metrics the way the comparison table prints them: six
/// decimals for MAE and RMSE, three for MSE.
pub fn render_metrics(mae_e3: f64, mse_e6: f64, rmse_e3: f64) -> String {
    format!("{mae_e3:.6} / {mse_e6:.3} / {rmse_e3:.6}")
}

/// Writes `tag,mae_e3,mse_e6,rmse_e3,n[,best]` rows.
pub fn write_reports_csv<W: Write>(reports: &[EvalReport], mut out: W) -> io::Result<()> {
    let best = best_rows(reports);
    writeln!(out, "model,mae_e3,mse_e6,rmse_e3,n,best")?;
    for (i, r) in reports.iter().enumerate() {
        let marks: Vec<&str> = ["mae", "mse", "rmse"]
            .iter()
            .zip(best.iter())
            .filter(|(_, &b)| b == Some(i))
            .map(|(name, _)| *name)
            .collect();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.tag,
            r.mae_e3,
            r.mse_e6,
            r.rmse_e3,
            r.n,
            marks.join("|")
        )?;
    }
    out.flush()
}

/// Index of the lowest MAE, MSE and RMSE rows (first wins on ties).
pub fn best_rows(reports: &[EvalReport]) -> [Option<usize>; 3] {
    let argmin = |key: fn(&EvalReport) -> f64| {
        reports
            .iter()
            .enumerate()
            .fold(None::<(usize, f64)>, |best, (i, r)| match best {
                Some((_, b)) if b <= key(r) => best,
                _ => Some((i, key(r))),
            })
            .map(|(i, _)| i)
    };
    [argmin(|r| r.mae_e3), argmin(|r| r.mse_e6), argmin(|r| r.rmse_e3)]
}

/// Aligned text table; the best value per metric is starred.
pub fn format_table(reports: &[EvalReport]) -> String {
    let best = best_rows(reports);
    let mut s = format!("{:<6} {:>14} {:>14} {:>14} {:>8}\n", "MODEL", "MAE(e-3)", "MSE(e-6)", "RMSE(e-3)", "N");
    for (i, r) in reports.iter().enumerate() {
        let star = |k: usize| if best[k] == Some(i) { "*" } else { " " };
        s.push_str(&format!(
            "{:<6} {:>13.6}{} {:>13.3}{} {:>13.6}{} {:>8}\n",
            r.tag.as_str(),
            r.mae_e3,
            star(0),
            r.mse_e6,
            star(1),
            r.rmse_e3,
            star(2),
            r.n
        ));
    }
    s
}
