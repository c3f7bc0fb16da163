//! Periodized orthogonal discrete wavelet transform and level-zeroing denoiser.
//!
//! The transform treats the signal as circular, so every level halves the
//! coefficient count exactly and the analysis operator is orthogonal. Signals
//! whose length is not a multiple of `2^levels` are right-padded by repeating
//! the last sample and truncated back after reconstruction.

use crate::Scalar;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WaveletError {
    #[error("signal of length {len} too short for {levels} levels (need {min})")]
    SignalTooShort { len: usize, levels: usize, min: usize },
    #[error("decomposition levels must be at least 1")]
    InvalidLevels,
    #[error("coefficient shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
}

/// Symlet-15 decomposition low-pass filter, 30 taps.
///
/// Values as tabulated by PyWavelets (`pywt.Wavelet("sym15").dec_lo`). They are
/// checked by the orthonormality tests below rather than trusted.
const SYM15_DEC_LO: [f64; 30] = [
    9.712419737963348e-06,
    -7.35966679891947e-06,
    -0.00016066186637495343,
    5.512254785558665e-05,
    0.0010705672194623959,
    -0.0002673164464718057,
    -0.0035901654473726417,
    0.003423450736351241,
    0.01007997708790567,
    -0.01940501143093447,
    -0.03887671687683349,
    0.021937642719753955,
    0.04073547969681068,
    -0.04108266663538248,
    0.11153369514261872,
    0.5786404152150345,
    0.7218430296361812,
    0.2439627054321663,
    -0.1966263587662373,
    -0.1340562984562539,
    0.06839331006048024,
    0.06796982904487918,
    -0.008744788886477952,
    -0.01717125278163873,
    0.0015261382781819983,
    0.003481028737064895,
    -0.00010815440168545525,
    -0.00040216853760293483,
    2.171789015077892e-05,
    2.866070852531808e-05,
];

/// A two-channel orthogonal filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletSpec<T> {
    pub name: String,
    pub decomposition_low: Vec<T>,
    pub decomposition_high: Vec<T>,
    pub reconstruction_low: Vec<T>,
    pub reconstruction_high: Vec<T>,
}

impl<T: Scalar> WaveletSpec<T> {
    pub fn sym15() -> Self {
        let lo: Vec<T> = SYM15_DEC_LO.iter().map(|&c| T::lit(c)).collect();
        Self::from_lowpass("sym15", lo).expect("sym15 filter is well formed")
    }

    /// Builds the quadrature-mirror bank from a decomposition low-pass filter:
    /// `hi[n] = (-1)^(n+1) lo[L-1-n]`, reconstruction filters are the
    /// time-reversed decomposition filters.
    pub fn from_lowpass(name: &str, decomposition_low: Vec<T>) -> Result<Self, WaveletError> {
        let len = decomposition_low.len();
        if len < 2 || len % 2 != 0 {
            return Err(WaveletError::InvalidFilter(format!("length {len} must be even and >= 2")));
        }
        let decomposition_high: Vec<T> = (0..len)
            .map(|n| {
                let v = decomposition_low[len - 1 - n];
                if n % 2 == 0 {
                    -v
                } else {
                    v
                }
            })
            .collect();
        let reconstruction_low = decomposition_low.iter().rev().copied().collect();
        let reconstruction_high = decomposition_high.iter().rev().copied().collect();
        Ok(WaveletSpec {
            name: name.to_string(),
            decomposition_low,
            decomposition_high,
            reconstruction_low,
            reconstruction_high,
        })
    }

    pub fn taps(&self) -> usize {
        self.decomposition_low.len()
    }

    /// One analysis step on an even-length circular signal.
    fn analyze(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        let n = x.len();
        let taps = self.taps();
        let half = n / 2;
        let mut approx = vec![T::zero(); half];
        let mut detail = vec![T::zero(); half];
        // a[k] = Σ_j lo[L-1-j] x[(2k + j) mod n]
        for k in 0..half {
            let (mut a, mut d) = (T::zero(), T::zero());
            for j in 0..taps {
                let xv = x[(2 * k + j) % n];
                a += self.reconstruction_low[j] * xv;
                d += self.reconstruction_high[j] * xv;
            }
            approx[k] = a;
            detail[k] = d;
        }
        (approx, detail)
    }

    /// Adjoint of [`analyze`](Self::analyze), which is its inverse.
    fn synthesize(&self, approx: &[T], detail: &[T]) -> Vec<T> {
        let n = approx.len() * 2;
        let mut x = vec![T::zero(); n];
        for k in 0..approx.len() {
            let (a, d) = (approx[k], detail[k]);
            for j in 0..self.taps() {
                x[(2 * k + j) % n] += self.reconstruction_low[j] * a + self.reconstruction_high[j] * d;
            }
        }
        x
    }
}

/// Multi-level decomposition. `details[0]` is the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct DwtCoefficients<T> {
    pub approx: Vec<T>,
    pub details: Vec<Vec<T>>,
    pub original_length: usize,
    pub levels: usize,
}

impl<T: Scalar> DwtCoefficients<T> {
    /// Total squared magnitude of all coefficients.
    pub fn energy(&self) -> T {
        self.approx.iter().chain(self.details.iter().flatten()).map(|&c| c * c).sum()
    }

    /// Multiplies every coefficient by `k`.
    pub fn scaled(&self, k: T) -> Self {
        let mut out = self.clone();
        out.approx.iter_mut().chain(out.details.iter_mut().flatten()).for_each(|c| *c *= k);
        out
    }

    /// Writes `level,index,value` rows; level 0 is the approximation, levels
    /// `1..=levels` the details from finest to coarsest.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "level,index,value")?;
        for (i, c) in self.approx.iter().enumerate() {
            writeln!(out, "0,{i},{c}")?;
        }
        for (lvl, d) in self.details.iter().enumerate() {
            for (i, c) in d.iter().enumerate() {
                writeln!(out, "{},{i},{c}", lvl + 1)?;
            }
        }
        out.flush()
    }
}

/// Length after edge padding to a multiple of `2^levels`.
pub fn padded_length(len: usize, levels: usize) -> usize {
    let block = 1usize << levels;
    len.div_ceil(block) * block
}

pub fn dwt<T: Scalar>(
    signal: &[T],
    spec: &WaveletSpec<T>,
    levels: usize,
) -> Result<DwtCoefficients<T>, WaveletError> {
    if levels == 0 {
        return Err(WaveletError::InvalidLevels);
    }
    let min = 1usize << levels;
    if signal.len() < min {
        return Err(WaveletError::SignalTooShort { len: signal.len(), levels, min });
    }
    let mut current = signal.to_vec();
    let last = *signal.last().expect("non-empty");
    current.resize(padded_length(signal.len(), levels), last);

    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (a, d) = spec.analyze(&current);
        details.push(d);
        current = a;
    }
    Ok(DwtCoefficients { approx: current, details, original_length: signal.len(), levels })
}

pub fn idwt<T: Scalar>(coeffs: &DwtCoefficients<T>, spec: &WaveletSpec<T>) -> Result<Vec<T>, WaveletError> {
    if coeffs.levels == 0 || coeffs.details.len() != coeffs.levels {
        return Err(WaveletError::ShapeMismatch(format!(
            "levels = {} but {} detail arrays",
            coeffs.levels,
            coeffs.details.len()
        )));
    }
    let padded = padded_length(coeffs.original_length, coeffs.levels);
    let expect_approx = padded >> coeffs.levels;
    if coeffs.approx.len() != expect_approx || coeffs.original_length == 0 {
        return Err(WaveletError::ShapeMismatch(format!(
            "approximation has {} coefficients, expected {expect_approx}",
            coeffs.approx.len()
        )));
    }
    let mut current = coeffs.approx.clone();
    for (lvl, d) in coeffs.details.iter().enumerate().rev() {
        let expect = padded >> (lvl + 1);
        if d.len() != expect || current.len() != expect {
            return Err(WaveletError::ShapeMismatch(format!(
                "detail level {} has {} coefficients, expected {expect}",
                lvl + 1,
                d.len()
            )));
        }
        current = spec.synthesize(&current, d);
    }
    current.truncate(coeffs.original_length);
    Ok(current)
}

/// Number of finest detail levels zeroed by [`denoise`] by default.
pub const DEFAULT_ZEROED_LEVELS: usize = 2;

/// Decomposes to exactly `zeroed_levels` levels, zeroes every detail band
/// and reconstructs. Output length equals input length.
pub fn denoise<T: Scalar>(
    signal: &[T],
    spec: &WaveletSpec<T>,
    zeroed_levels: usize,
) -> Result<Vec<T>, WaveletError> {
    let mut coeffs = dwt(signal, spec, zeroed_levels)?;
    for d in coeffs.details.iter_mut().take(zeroed_levels) {
        d.iter_mut().for_each(|c| *c = T::zero());
    }
    idwt(&coeffs, spec)
}
