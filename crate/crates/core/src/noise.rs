//! Bandlimited Gaussian white noise: synthesis, autocorrelation and
//! spectral estimates.
//!
//! Synthesis draws white Gaussian samples from a seeded ChaCha8 stream,
//! removes every FFT bin above the bandwidth and rescales so that the
//! one-sided density is `S0` over `[0, B]`. The resulting process has the
//! autocorrelation `B·S0·sin(2πBτ)/(2πBτ)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the noise engine.
#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("invalid noise spec: {0}")]
    InvalidSpec(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Physical unit carried by a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Volt,
    Ampere,
}

/// A uniformly sampled real-valued signal.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrace {
    samples: Vec<f64>,
    sample_rate: f64,
    unit: Unit,
}

impl NoiseTrace {
    pub fn new(samples: Vec<f64>, sample_rate: f64, unit: Unit) -> Result<Self, NoiseError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(NoiseError::InvalidSpec(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(NoiseError::InvalidSpec(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
            unit,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample interval in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Mean of the squared samples; zero for an empty trace.
    pub fn mean_square(&self) -> f64 {
        mean_square(&self.samples)
    }

    /// The same samples in reverse order.
    pub fn reversed(&self) -> Self {
        let mut samples = self.samples.clone();
        samples.reverse();
        Self {
            samples,
            sample_rate: self.sample_rate,
            unit: self.unit,
        }
    }
}

/// Parameters of a bandlimited white noise source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Upper band edge in hertz.
    pub bandwidth: f64,
    /// One-sided spectral density in V²/Hz over `[0, bandwidth]`.
    pub spectral_density: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(bandwidth: f64, spectral_density: f64, seed: u64) -> Self {
        Self {
            bandwidth,
            spectral_density,
            seed,
        }
    }

    /// Total power `S0·B`, the variance of the generated process.
    pub fn power(&self) -> f64 {
        self.spectral_density * self.bandwidth
    }

    fn validate(&self) -> Result<(), NoiseError> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(NoiseError::InvalidSpec(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if !(self.spectral_density >= 0.0 && self.spectral_density.is_finite()) {
            return Err(NoiseError::InvalidSpec(format!(
                "spectral density must be non-negative, got {}",
                self.spectral_density
            )));
        }
        Ok(())
    }
}

/// Mean of squares; zero for an empty slice.
pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Generates `floor(duration·sample_rate)` samples of bandlimited Gaussian
/// white noise in volts.
///
/// The trace is synthesized `1/B` longer at each end and trimmed, so the
/// circular wraparound of the FFT filter never reaches the returned samples.
pub fn generate_bandlimited_gaussian(
    spec: &NoiseSpec,
    duration: f64,
    sample_rate: f64,
) -> Result<NoiseTrace, NoiseError> {
    spec.validate()?;
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(NoiseError::InvalidSpec(format!(
            "duration must be non-negative, got {duration}"
        )));
    }
    if !(sample_rate >= 2.0 * spec.bandwidth && sample_rate.is_finite()) {
        return Err(NoiseError::InvalidSpec(format!(
            "sample rate {sample_rate} Hz is below the Nyquist rate {} Hz",
            2.0 * spec.bandwidth
        )));
    }
    let n = (duration * sample_rate).floor() as usize;
    generate_samples(spec, n, sample_rate)
}

/// Same as [`generate_bandlimited_gaussian`] with the length given in samples.
pub fn generate_samples(
    spec: &NoiseSpec,
    n: usize,
    sample_rate: f64,
) -> Result<NoiseTrace, NoiseError> {
    spec.validate()?;
    if sample_rate < 2.0 * spec.bandwidth {
        return Err(NoiseError::InvalidSpec(format!(
            "sample rate {sample_rate} Hz is below the Nyquist rate {} Hz",
            2.0 * spec.bandwidth
        )));
    }
    if n == 0 {
        return NoiseTrace::new(Vec::new(), sample_rate, Unit::Volt);
    }
    let pad = (sample_rate / spec.bandwidth).ceil() as usize;
    let total = n + 2 * pad;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut buf: Vec<Complex<f64>> = (0..total)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(total).process(&mut buf);

    let bin_width = sample_rate / total as f64;
    let mut kept = 0usize;
    for (j, bin) in buf.iter_mut().enumerate() {
        let freq = j.min(total - j) as f64 * bin_width;
        if freq <= spec.bandwidth {
            kept += 1;
        } else {
            *bin = Complex::new(0.0, 0.0);
        }
    }

    planner.plan_fft_inverse(total).process(&mut buf);

    // Unit-variance white input keeps kept/total of its variance after masking.
    let scale = (spec.power() * total as f64 / kept as f64).sqrt() / total as f64;
    let samples = buf[pad..pad + n].iter().map(|c| c.re * scale).collect();
    NoiseTrace::new(samples, sample_rate, Unit::Volt)
}

/// Biased autocorrelation estimate `(1/N)·Σ x[n]·x[n+m]` for lags
/// `0..=max_lag`, returned as `(lag in seconds, value)`.
pub fn empirical_autocorrelation(
    trace: &NoiseTrace,
    max_lag: usize,
) -> Result<Vec<(f64, f64)>, NoiseError> {
    let x = trace.samples();
    if x.is_empty() {
        return Err(NoiseError::Degenerate(
            "autocorrelation of an empty trace".into(),
        ));
    }
    if max_lag >= x.len() {
        return Err(NoiseError::Degenerate(format!(
            "max lag {max_lag} must be below the trace length {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let dt = trace.dt();
    Ok((0..=max_lag)
        .map(|m| {
            let sum: f64 = x[..x.len() - m]
                .iter()
                .zip(&x[m..])
                .map(|(a, b)| a * b)
                .sum();
            (m as f64 * dt, sum / n)
        })
        .collect())
}

/// `R(τ) = B·S0·sin(2πBτ)/(2πBτ)`, with `R(0) = B·S0`.
pub fn theoretical_autocorrelation(bandwidth: f64, spectral_density: f64, tau: f64) -> f64 {
    let power = bandwidth * spectral_density;
    // Zeros of the sine land on half-integer multiples of 1/B; hit them exactly.
    let half_periods = 2.0 * bandwidth * tau;
    if half_periods == 0.0 {
        return power;
    }
    let nearest = half_periods.round();
    if (half_periods - nearest).abs() <= 1e-9 * nearest.abs() {
        return 0.0;
    }
    let x = PI * half_periods;
    power * x.sin() / x
}

/// Large-sample standard error of the biased autocorrelation estimator at
/// `lag` samples for a Gaussian process with the ideal sinc correlation
/// (Bartlett's formula).
pub fn autocorrelation_standard_error(
    bandwidth: f64,
    spectral_density: f64,
    sample_rate: f64,
    n: usize,
    lag: usize,
) -> f64 {
    let r = |k: i64| theoretical_autocorrelation(bandwidth, spectral_density, k as f64 / sample_rate);
    let reach = ((200.0 * sample_rate / bandwidth) as i64).min(n as i64);
    let m = lag as i64;
    let var: f64 = (-reach..=reach)
        .map(|k| r(k) * r(k) + r(k + m) * r(k - m))
        .sum();
    (var / n as f64).sqrt()
}

/// One-sided power spectral density averaged over non-overlapping
/// Hann-windowed segments of `segment_len` samples. Returns
/// `(frequency, density)` pairs for bins `0..=segment_len/2`.
pub fn averaged_periodogram(
    trace: &NoiseTrace,
    segment_len: usize,
) -> Result<Vec<(f64, f64)>, NoiseError> {
    if segment_len < 2 || trace.len() < segment_len {
        return Err(NoiseError::Degenerate(format!(
            "need at least one segment of {segment_len} samples, trace has {}",
            trace.len()
        )));
    }
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment_len as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fs = trace.sample_rate();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_len);
    let half = segment_len / 2;
    let mut acc = vec![0.0; half + 1];
    let segments = trace.samples().chunks_exact(segment_len);
    let count = segments.len();
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    for seg in segments {
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    Ok(acc
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let one_sided = if j == 0 || (segment_len.is_multiple_of(2) && j == half) {
                1.0
            } else {
                2.0
            };
            let density = one_sided * p / (count as f64 * fs * window_power);
            (j as f64 * fs / segment_len as f64, density)
        })
        .collect())
}
