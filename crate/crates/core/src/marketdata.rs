//! OHLC bar ingestion, validation and chronological splitting.
//!
//! The on-disk format is a headed CSV, `timestamp,open,high,low,close`, with
//! integer epoch seconds and `.` decimals. Invalid rows are rejected with the
//! 1-based file line they came from (the header is line 1); nothing is
//! repaired. Gaps between timestamps are allowed.

use crate::Scalar;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CSV_HEADER: [&str; 5] = ["timestamp", "open", "high", "low", "close"];

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("input file not found: {0}")]
    MissingFile(String),
    #[error("line {line}: malformed row ({reason})")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: timestamp does not increase")]
    NonMonotoneTimestamp { line: u64 },
    #[error("line {line}: invalid bar ({reason})")]
    InvalidBar { line: u64, reason: String },
    #[error("series has no bars")]
    Empty,
    #[error("series too short: {len} bars, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("train fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar<T> {
    /// Epoch seconds, UTC.
    pub timestamp: i64,
    pub open: T,
    pub high: T,
    pub low: T,
    pub close: T,
}

impl<T: Scalar> Bar<T> {
    /// Checks positivity, finiteness and the high/low envelope.
    pub fn check(&self) -> Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite()) {
            return Err("non-finite price".into());
        }
        if prices.iter().any(|&p| p <= T::zero()) {
            return Err("price not strictly positive".into());
        }
        if self.high < self.low {
            return Err(format!("high {} < low {}", self.high, self.low));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!("high {} below open/close", self.high));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!("low {} above open/close", self.low));
        }
        Ok(())
    }
}

/// A validated, strictly time-ordered, non-empty bar sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcSeries<T> {
    symbol: String,
    interval_seconds: u32,
    bars: Vec<Bar<T>>,
}

impl<T: Scalar> OhlcSeries<T> {
    /// Validates `bars`. Error line numbers are reported as if the bars came
    /// from a CSV file (first bar on line 2).
    pub fn new(
        symbol: impl Into<String>,
        interval_seconds: u32,
        bars: Vec<Bar<T>>,
    ) -> Result<Self, MarketDataError> {
        if bars.is_empty() {
            return Err(MarketDataError::Empty);
        }
        for (i, bar) in bars.iter().enumerate() {
            let line = i as u64 + 2;
            bar.check().map_err(|reason| MarketDataError::InvalidBar { line, reason })?;
            if i > 0 && bar.timestamp <= bars[i - 1].timestamp {
                return Err(MarketDataError::NonMonotoneTimestamp { line });
            }
        }
        Ok(OhlcSeries { symbol: symbol.into(), interval_seconds: interval_seconds.max(1), bars })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn interval_seconds(&self) -> u32 {
        self.interval_seconds
    }

    pub fn bars(&self) -> &[Bar<T>] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.bars.iter().map(|b| b.timestamp).collect()
    }

    pub fn closes(&self) -> Vec<T> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn columns(&self) -> OhlcColumns<T> {
        OhlcColumns {
            open: self.bars.iter().map(|b| b.open).collect(),
            high: self.bars.iter().map(|b| b.high).collect(),
            low: self.bars.iter().map(|b| b.low).collect(),
            close: self.closes(),
        }
    }

    /// The first `n` bars (clamped to the series length, at least one).
    pub fn head(&self, n: usize) -> Self {
        let n = n.clamp(1, self.bars.len());
        OhlcSeries {
            symbol: self.symbol.clone(),
            interval_seconds: self.interval_seconds,
            bars: self.bars[..n].to_vec(),
        }
    }
}

/// OHLC prices as four parallel columns.
///
/// Unlike [`OhlcSeries`] no bar envelope is enforced: denoising each column
/// separately can leave a close slightly above the matching high.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcColumns<T> {
    pub open: Vec<T>,
    pub high: Vec<T>,
    pub low: Vec<T>,
    pub close: Vec<T>,
}

impl<T: Scalar> OhlcColumns<T> {
    pub fn len(&self) -> usize {
        self.close.len()
    }

    pub fn is_empty(&self) -> bool {
        self.close.is_empty()
    }

    /// Applies `f` to each column independently.
    pub fn try_map<E>(&self, mut f: impl FnMut(&[T]) -> Result<Vec<T>, E>) -> Result<Self, E> {
        Ok(OhlcColumns {
            open: f(&self.open)?,
            high: f(&self.high)?,
            low: f(&self.low)?,
            close: f(&self.close)?,
        })
    }

    /// The first `n` rows of every column.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        OhlcColumns {
            open: self.open[..n].to_vec(),
            high: self.high[..n].to_vec(),
            low: self.low[..n].to_vec(),
            close: self.close[..n].to_vec(),
        }
    }
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<OhlcSeries<T>, MarketDataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => MarketDataError::MissingFile(path.display().to_string()),
        _ => MarketDataError::Io(e),
    })?;
    let symbol = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    read_csv(file, symbol)
}

/// Parses bars from any reader. The interval is the smallest positive gap
/// between consecutive timestamps (1 for a single bar).
pub fn read_csv<T: Scalar, R: Read>(
    reader: R,
    symbol: impl Into<String>,
) -> Result<OhlcSeries<T>, MarketDataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut bars: Vec<Bar<T>> = Vec::new();
    let mut saw_header = false;
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx as u64 + 1;
        let rec = rec.map_err(|e| MarketDataError::MalformedRow { line, reason: e.to_string() })?;
        if !saw_header {
            let got: Vec<&str> = rec.iter().collect();
            if got != CSV_HEADER {
                return Err(MarketDataError::MalformedRow {
                    line,
                    reason: format!("expected header {}", CSV_HEADER.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if rec.len() != 5 {
            return Err(MarketDataError::MalformedRow {
                line,
                reason: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let malformed = |what: &str| MarketDataError::MalformedRow {
            line,
            reason: format!("cannot parse {what}"),
        };
        let timestamp: i64 = rec[0].parse().map_err(|_| malformed("timestamp"))?;
        let mut px = [T::zero(); 4];
        for (k, name) in CSV_HEADER[1..].iter().enumerate() {
            px[k] = T::from_str_radix(&rec[k + 1], 10).map_err(|_| malformed(name))?;
        }
        let bar = Bar { timestamp, open: px[0], high: px[1], low: px[2], close: px[3] };
        bar.check().map_err(|reason| MarketDataError::InvalidBar { line, reason })?;
        if let Some(prev) = bars.last() {
            if timestamp <= prev.timestamp {
                return Err(MarketDataError::NonMonotoneTimestamp { line });
            }
        }
        bars.push(bar);
    }
    if bars.is_empty() {
        return Err(MarketDataError::Empty);
    }
    let interval = bars
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .min()
        .unwrap_or(1)
        .clamp(1, u32::MAX as i64) as u32;
    OhlcSeries::new(symbol, interval, bars)
}

pub fn write_csv<T: Scalar, W: Write>(series: &OhlcSeries<T>, mut out: W) -> io::Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for b in series.bars() {
        // `Display` for floats is the shortest string that parses back exactly.
        writeln!(out, "{},{},{},{},{}", b.timestamp, b.open, b.high, b.low, b.close)?;
    }
    out.flush()
}

pub fn save_csv<T: Scalar>(series: &OhlcSeries<T>, path: impl AsRef<Path>) -> io::Result<()> {
    write_csv(series, io::BufWriter::new(File::create(path)?))
}

/// Index of the first test bar: `floor(len * train_fraction)`.
pub fn split_index(len: usize, train_fraction: f64) -> Result<usize, MarketDataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MarketDataError::InvalidFraction(train_fraction));
    }
    Ok((len as f64 * train_fraction).floor() as usize)
}

pub const MIN_SPLIT_LEN: usize = 10;

/// Splits without shuffling: the first `floor(n * train_fraction)` bars
/// train, the rest test.
pub fn chronological_split<T: Scalar>(
    series: &OhlcSeries<T>,
    train_fraction: f64,
) -> Result<(OhlcSeries<T>, OhlcSeries<T>), MarketDataError> {
    if series.len() < MIN_SPLIT_LEN {
        return Err(MarketDataError::SeriesTooShort { len: series.len(), min: MIN_SPLIT_LEN });
    }
    let cut = split_index(series.len(), train_fraction)?;
    if cut == 0 || cut == series.len() {
        return Err(MarketDataError::InvalidFraction(train_fraction));
    }
    let part = |bars: &[Bar<T>]| OhlcSeries {
        symbol: series.symbol.clone(),
        interval_seconds: series.interval_seconds,
        bars: bars.to_vec(),
    };
    Ok((part(&series.bars[..cut]), part(&series.bars[cut..])))
}
