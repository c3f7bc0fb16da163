//! Price reconstruction and CSV exports for overlay and ablation plots.

use crate::ablation::AblationResult;
use crate::error::{HarnessError, Result, Stage, StageExt};
use roc_core::metrics::{format_table, write_reports_csv};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Number of rows in a zoomed overlay view.
pub const ZOOM_ROWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    /// Timestamp of the forecast bar `i + horizon`.
    pub timestamp: i64,
    pub true_close: f64,
    pub predicted_close: f64,
}

/// `close[i] · (1 + pred)` for each window ending at `i`: the price implied
/// at `i + horizon` by a predicted rate of change.
pub fn reconstruct_prices(raw_close: &[f64], end_indices: &[usize], predictions: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if end_indices.len() != predictions.len() {
        return Err(HarnessError::IndexMisalignment(format!(
            "{} windows but {} predictions",
            end_indices.len(),
            predictions.len()
        )));
    }
    end_indices
        .iter()
        .zip(predictions)
        .map(|(&i, &p)| {
            if i + horizon >= raw_close.len() {
                return Err(HarnessError::IndexMisalignment(format!("bar {i} + {horizon} beyond {} closes", raw_close.len())));
            }
            Ok(raw_close[i] * (1.0 + p))
        })
        .collect()
}

pub fn overlay_rows(
    timestamps: &[i64],
    raw_close: &[f64],
    end_indices: &[usize],
    predictions: &[f64],
    horizon: usize,
) -> Result<Vec<OverlayRow>> {
    if timestamps.len() != raw_close.len() {
        return Err(HarnessError::IndexMisalignment(format!("{} timestamps, {} closes", timestamps.len(), raw_close.len())));
    }
    let prices = reconstruct_prices(raw_close, end_indices, predictions, horizon)?;
    Ok(end_indices
        .iter()
        .zip(prices)
        .map(|(&i, p)| OverlayRow { timestamp: timestamps[i + horizon], true_close: raw_close[i + horizon], predicted_close: p })
        .collect())
}

/// Rows `start .. start + len`, clamped to the overlay.
pub fn zoom_slice(rows: &[OverlayRow], start: usize, len: usize) -> &[OverlayRow] {
    let s = start.min(rows.len());
    &rows[s..(s + len).min(rows.len())]
}

pub fn write_overlay(rows: &[OverlayRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).stage(Stage::Output)?;
    for r in rows {
        w.serialize(r).stage(Stage::Output)?;
    }
    w.flush().stage(Stage::Output)
}

pub fn read_overlay(path: &Path) -> Result<Vec<OverlayRow>> {
    let mut r = csv::Reader::from_path(path).stage(Stage::Ingest)?;
    r.deserialize().collect::<std::result::Result<_, _>>().stage(Stage::Ingest)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).stage(Stage::Output)
}

/// Writes `ablation.csv`, `table.txt`, `loss_history.csv`, `meta.json`,
/// one `overlay_<TAG>.csv` per variant and `overlay.csv` for the proposed
/// (or only) variant. Returns the written paths.
pub fn emit_plot_data(result: &AblationResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).stage(Stage::Output)?;
    let mut written = Vec::new();

    let path = out_dir.join("ablation.csv");
    let mut f = BufWriter::new(File::create(&path).stage(Stage::Output)?);
    write_reports_csv(&result.reports(), &mut f).stage(Stage::Output)?;
    f.flush().stage(Stage::Output)?;
    written.push(path);

    let path = out_dir.join("table.txt");
    write_text(&path, &format_table(&result.reports()))?;
    written.push(path);

    let path = out_dir.join("loss_history.csv");
    let mut s = String::from("network,epoch,loss\n");
    for n in &result.networks {
        for (e, l) in n.loss_history.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", n.key, e + 1, l));
        }
    }
    write_text(&path, &s)?;
    written.push(path);

    let path = out_dir.join("meta.json");
    write_text(&path, &(serde_json::to_string_pretty(&result.meta()).stage(Stage::Output)? + "\n"))?;
    written.push(path);

    for o in &result.outcomes {
        let path = out_dir.join(format!("overlay_{}.csv", o.outcome.variant));
        write_overlay(&o.overlay, &path)?;
        written.push(path);
    }
    if let Some(main) = result.primary() {
        let path = out_dir.join("overlay.csv");
        write_overlay(&main.overlay, &path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstruction_examples() {
        let close = [100.0, 101.0, 102.0, 103.0, 104.0, 105.0, 106.0];
        assert_eq!(reconstruct_prices(&close, &[0], &[0.0], 5).unwrap(), vec![100.0]);
        assert_eq!(reconstruct_prices(&close, &[0], &[0.01], 5).unwrap(), vec![101.0]);
        let label = (close[6] - close[1]) / close[1];
        let p = reconstruct_prices(&close, &[1], &[label], 5).unwrap()[0];
        assert!((p - close[6]).abs() < 1e-12);
        assert!(matches!(reconstruct_prices(&close, &[2], &[0.0], 5), Err(HarnessError::IndexMisalignment(_))));
        assert!(matches!(reconstruct_prices(&close, &[0, 1], &[0.0], 5), Err(HarnessError::IndexMisalignment(_))));
    }

    #[test]
    fn overlay_round_trip_and_zoom() {
        let close: Vec<f64> = (0..40).map(|i| 100.0 + (i as f64).sin() / 3.0).collect();
        let ts: Vec<i64> = (0..40).map(|i| 1_000 + 300 * i).collect();
        let ends: Vec<usize> = (10..30).collect();
        let pred: Vec<f64> = ends.iter().map(|&i| 1e-3 * (i as f64).cos() / 7.0).collect();
        let rows = overlay_rows(&ts, &close, &ends, &pred, 5).unwrap();
        assert_eq!(rows.len(), 20);
        assert_eq!(rows[0].timestamp, ts[15]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.csv");
        write_overlay(&rows, &p).unwrap();
        assert_eq!(read_overlay(&p).unwrap(), rows);
        for start in 0..=rows.len() - ZOOM_ROWS {
            assert_eq!(zoom_slice(&rows, start, ZOOM_ROWS), &rows[start..start + ZOOM_ROWS]);
        }
        assert_eq!(zoom_slice(&rows, 18, ZOOM_ROWS).len(), 2);
    }
}
