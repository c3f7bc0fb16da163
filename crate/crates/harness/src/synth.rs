//! Seeded synthetic OHLC bars: trend plus sinusoid plus a random walk, with
//! i.i.d. noise on the close.

use crate::error::{HarnessError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use roc_core::marketdata::{Bar, OhlcSeries};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub bars: usize,
    /// Overrides the run seed for data generation only.
    pub seed: Option<u64>,
    pub symbol: String,
    pub start_price: f64,
    pub start_timestamp: i64,
    pub interval_seconds: u32,
    /// Log-price drift per bar.
    pub drift: f64,
    /// Log-price amplitude of the sinusoid.
    pub amplitude: f64,
    /// Sinusoid period in bars.
    pub period: f64,
    /// Per-bar standard deviation of the random-walk component.
    pub walk_sigma: f64,
    /// Standard deviation of the i.i.d. log-price noise.
    pub noise_sigma: f64,
    /// Scale of the high/low wicks relative to price.
    pub wick: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            bars: 5_000,
            seed: None,
            symbol: "SYNTH".into(),
            start_price: 110.0,
            start_timestamp: 1_514_764_800,
            interval_seconds: 300,
            drift: 1e-6,
            amplitude: 4e-3,
            period: 96.0,
            walk_sigma: 1.5e-4,
            noise_sigma: 6e-4,
            wick: 2e-4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(format!("synth: {m}")));
        if self.bars == 0 {
            return bad("bars must be >= 1");
        }
        if !(self.start_price > 0.0 && self.start_price.is_finite()) {
            return bad("start_price must be positive");
        }
        if !(self.period > 0.0) {
            return bad("period must be positive");
        }
        if [self.walk_sigma, self.noise_sigma, self.wick, self.amplitude].iter().any(|v| !(*v >= 0.0)) {
            return bad("scales must be non-negative");
        }
        if self.interval_seconds == 0 {
            return bad("interval_seconds must be positive");
        }
        Ok(())
    }
}

/// Generates `config.bars` bars; `run_seed` is used unless the config
/// carries its own seed.
pub fn generate(config: &SynthConfig, run_seed: u64) -> Result<OhlcSeries<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(run_seed));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let base = config.start_price.ln();
    let mut walk = 0.0;
    let mut prev_close = config.start_price;
    let mut bars = Vec::with_capacity(config.bars);
    for t in 0..config.bars {
        walk += config.walk_sigma * unit.sample(&mut rng);
        let smooth = config.drift * t as f64 + config.amplitude * (TAU * t as f64 / config.period).sin();
        let close = (base + smooth + walk + config.noise_sigma * unit.sample(&mut rng)).exp();
        let open = if t == 0 { close } else { prev_close };
        let up: f64 = unit.sample(&mut rng);
        let down: f64 = unit.sample(&mut rng);
        let high = open.max(close) * (1.0 + config.wick * up.abs());
        let low = open.min(close) * (1.0 - config.wick * down.abs());
        bars.push(Bar {
            timestamp: config.start_timestamp + t as i64 * config.interval_seconds as i64,
            open,
            high,
            low,
            close,
        });
        prev_close = close;
    }
    OhlcSeries::new(config.symbol.clone(), config.interval_seconds, bars).map_err(|e| HarnessError::Config(format!("synth: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_and_deterministic() {
        let c = SynthConfig { bars: 500, ..Default::default() };
        let a = generate(&c, 3).unwrap();
        assert_eq!(a.len(), 500);
        assert_eq!(a, generate(&c, 3).unwrap());
        assert_ne!(a, generate(&c, 4).unwrap());
        let pinned = SynthConfig { seed: Some(9), ..c };
        assert_eq!(generate(&pinned, 1).unwrap(), generate(&pinned, 2).unwrap());
        for w in a.bars().windows(2) {
            assert_eq!(w[1].open, w[0].close);
            assert_eq!(w[1].timestamp - w[0].timestamp, 300);
        }
    }

    #[test]
    fn noiseless_series_follows_sinusoid() {
        let c = SynthConfig { bars: 200, walk_sigma: 0.0, noise_sigma: 0.0, drift: 0.0, ..Default::default() };
        let s = generate(&c, 0).unwrap();
        let expect = |t: usize| 110.0 * (4e-3 * (TAU * t as f64 / 96.0).sin()).exp();
        for (t, b) in s.bars().iter().enumerate() {
            assert!((b.close - expect(t)).abs() < 1e-9);
        }
    }
}
