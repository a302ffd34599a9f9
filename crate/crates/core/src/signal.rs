//! Uniformly sampled signals and the excitation diagnostics run on them
//! before identification: crest factor, sampling/Nyquist frequencies and a
//! one-sided magnitude spectrum.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, uniformly sampled signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    name: String,
    unit: String,
    t0: f64,
    dt: f64,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        name: impl Into<String>,
        unit: impl Into<String>,
        t0: f64,
        dt: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidSeries(format!("dt must be positive, got {dt}")));
        }
        if !t0.is_finite() {
            return Err(Error::InvalidSeries("t0 must be finite".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidSeries("series needs at least one sample".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!("non-finite value at sample {i}")));
        }
        Ok(Self {
            name: name.into(),
            unit: unit.into(),
            t0,
            dt,
            values,
        })
    }

    /// Samples `f` at `t0 + k·dt` for `k in 0..len`.
    pub fn from_fn(
        name: impl Into<String>,
        unit: impl Into<String>,
        t0: f64,
        dt: f64,
        len: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let values = (0..len).map(|k| f(t0 + k as f64 * dt)).collect();
        Self::new(name, unit, t0, dt, values)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn renamed(mut self, name: impl Into<String>, unit: impl Into<String>) -> Self {
        self.name = name.into();
        self.unit = unit.into();
        self
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                found: values.len(),
            });
        }
        Self::new(self.name.clone(), self.unit.clone(), self.t0, self.dt, values)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    /// Every `factor`-th sample, starting with the first.
    pub fn decimate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidSeries("decimation factor must be positive".into()));
        }
        let values = self.values.iter().step_by(factor).copied().collect();
        Self::new(self.name.clone(), self.unit.clone(), self.t0, self.dt * factor as f64, values)
    }

    /// Samples `start..end` as a new series with shifted `t0`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.values.len() {
            return Err(Error::InvalidSeries(format!(
                "slice {start}..{end} out of range for {} samples",
                self.values.len()
            )));
        }
        Self::new(
            self.name.clone(),
            self.unit.clone(),
            self.time(start),
            self.dt,
            self.values[start..end].to_vec(),
        )
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.values)
    }

    /// True when both series share `t0`, `dt` and length.
    pub fn same_grid(&self, other: &TimeSeries) -> bool {
        self.t0 == other.t0 && self.dt == other.dt && self.values.len() == other.values.len()
    }
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Peak-to-RMS ratio.
///
/// The raw variant divides `max(u)` by the RMS of the raw samples. The
/// centered variant removes the mean first and takes the peak as `max|u|`,
/// which makes it offset invariant and bounded below by 1.
pub fn crest_factor(s: &TimeSeries, centered: bool) -> Result<f64> {
    let values = s.values();
    if centered {
        let mean = s.mean();
        let dev: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let r = rms(&dev);
        if !(r > 0.0) {
            return Err(Error::ZeroPowerSignal);
        }
        let peak = dev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(peak / r)
    } else {
        let r = rms(values);
        if !(r > 0.0) {
            return Err(Error::ZeroPowerSignal);
        }
        let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(peak / r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDiagnostics {
    pub name: String,
    pub sample_freq_hz: f64,
    pub nyquist_freq_hz: f64,
    pub mean: f64,
    pub rms: f64,
    pub max_raw: f64,
    /// `None` when the signal has zero power.
    pub crest_raw: Option<f64>,
    /// `None` when the centered signal has zero power.
    pub crest_centered: Option<f64>,
}

pub fn diagnose(s: &TimeSeries) -> Result<SignalDiagnostics> {
    if s.len() < 2 {
        return Err(Error::InvalidSeries("diagnostics need at least two samples".into()));
    }
    let sample_freq_hz = 1.0 / s.dt();
    Ok(SignalDiagnostics {
        name: s.name().to_string(),
        sample_freq_hz,
        nyquist_freq_hz: sample_freq_hz / 2.0,
        mean: s.mean(),
        rms: s.rms(),
        max_raw: s.values().iter().copied().fold(f64::NEG_INFINITY, f64::max),
        crest_raw: crest_factor(s, false).ok(),
        crest_centered: crest_factor(s, true).ok(),
    })
}

/// One-sided magnitude spectrum of a mean-removed series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs_hz: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl Spectrum {
    /// Index and frequency of the largest magnitude.
    pub fn peak(&self) -> (usize, f64) {
        let (i, _) = self
            .magnitudes
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
        (i, self.freqs_hz[i])
    }

    pub fn energy(&self) -> f64 {
        self.magnitudes.iter().map(|m| m * m).sum()
    }
}

/// DFT magnitudes scaled so that `Σ magnitudes² = Σ (x − mean)²`.
///
/// With `X_k` the unnormalized DFT of `N` samples, bin 0 (and bin `N/2` for
/// even `N`) carry `|X_k|/√N`; interior bins carry `√2·|X_k|/√N` to fold in
/// the mirrored negative frequency.
pub fn spectrum(s: &TimeSeries) -> Result<Spectrum> {
    let n = s.len();
    if n < 4 {
        return Err(Error::InvalidSeries("spectrum needs at least four samples".into()));
    }
    let mean = s.mean();
    let mut buf: Vec<Complex<f64>> = s.values().iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let bins = n / 2 + 1;
    let scale = 1.0 / (n as f64).sqrt();
    let df = 1.0 / (n as f64 * s.dt());
    let mut freqs_hz = Vec::with_capacity(bins);
    let mut magnitudes = Vec::with_capacity(bins);
    for (k, x) in buf.iter().take(bins).enumerate() {
        let edge = k == 0 || (n % 2 == 0 && k == n / 2);
        let fold = if edge { 1.0 } else { std::f64::consts::SQRT_2 };
        freqs_hz.push(k as f64 * df);
        magnitudes.push(fold * scale * x.norm());
    }
    Ok(Spectrum { freqs_hz, magnitudes })
}

/// First `floor(N/2)` samples for estimation, the remainder for validation.
pub fn split_halves(s: &TimeSeries) -> Result<(TimeSeries, TimeSeries)> {
    if s.len() < 4 {
        return Err(Error::InvalidSeries("split needs at least four samples".into()));
    }
    let half = s.len() / 2;
    Ok((s.slice(0, half)?, s.slice(half, s.len())?))
}

/// A sinusoid whose frequency is a rational number of cycles per sample.
///
/// Phases are reduced with integer arithmetic, so tones whose frequencies
/// differ by a whole multiple of the sample frequency produce bit-identical
/// samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub amplitude: f64,
    pub cycles_num: i64,
    pub cycles_den: u32,
}

impl Tone {
    pub fn new(amplitude: f64, cycles_num: i64, cycles_den: u32) -> Self {
        Self { amplitude, cycles_num, cycles_den }
    }

    /// Frequency of the continuous generator at sample interval `dt`.
    pub fn freq_hz(&self, dt: f64) -> f64 {
        self.cycles_num as f64 / self.cycles_den as f64 / dt
    }

    pub fn sample(&self, k: u64) -> f64 {
        let den = self.cycles_den as i128;
        let phase = (self.cycles_num as i128 * k as i128).rem_euclid(den);
        let angle = std::f64::consts::TAU * phase as f64 / den as f64;
        self.amplitude * angle.sin()
    }

    pub fn series(&self, name: &str, unit: &str, t0: f64, dt: f64, len: usize) -> Result<TimeSeries> {
        TimeSeries::new(name, unit, t0, dt, (0..len as u64).map(|k| self.sample(k)).collect())
    }
}

/// Maximum-length binary sequence from a Fibonacci LFSR, mapped to ±amplitude.
///
/// `register_bits` must be in 3..=20. `hold` repeats each bit, lowering the
/// signal bandwidth.
pub fn prbs(register_bits: u32, seed: u32, hold: usize, len: usize, amplitude: f64) -> Vec<f64> {
    // primitive polynomial taps, highest degree first
    let taps: &[u32] = match register_bits {
        3 => &[3, 2],
        4 => &[4, 3],
        5 => &[5, 3],
        6 => &[6, 5],
        7 => &[7, 6],
        8 => &[8, 6, 5, 4],
        9 => &[9, 5],
        10 => &[10, 7],
        11 => &[11, 9],
        12 => &[12, 6, 4, 1],
        13 => &[13, 4, 3, 1],
        14 => &[14, 5, 3, 1],
        15 => &[15, 14],
        16 => &[16, 15, 13, 4],
        17 => &[17, 14],
        18 => &[18, 11],
        19 => &[19, 6, 2, 1],
        20 => &[20, 17],
        _ => panic!("prbs register length {register_bits} outside 3..=20"),
    };
    let n = register_bits;
    let mask = (1u32 << n) - 1;
    let mut state = (seed & mask).max(1);
    let hold = hold.max(1);
    let mut out = Vec::with_capacity(len);
    let mut bit = 0;
    for k in 0..len {
        if k % hold == 0 {
            bit = state & 1;
            let feedback = taps.iter().fold(0, |acc, &t| acc ^ (state >> (n - t)));
            state = (state >> 1) | ((feedback & 1) << (n - 1));
        }
        out.push(if bit == 1 { amplitude } else { -amplitude });
    }
    out
}
