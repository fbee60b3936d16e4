//! Magnetic-field drift: `1/f²` synthesis, the coil low-pass, Welch spectra
//! and window integrals over sampled traces.
//!
//! Drift is generated in the time domain as an integrated white sequence.
//! For a step variance `σ² = 2π²·A²·dt` the one-sided PSD of the walk is
//! `A²/f²` well below Nyquist, where `A` is the amplitude spectral density
//! at 1 Hz. The walk starts at exactly zero.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled field offsets in gauss.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace {
    dt: f64,
    t0: f64,
    samples: Vec<f64>,
}

impl FieldTrace {
    pub fn new(dt: f64, t0: f64, samples: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain("dt", dt, "(0, inf) s"));
        }
        if !t0.is_finite() {
            return Err(Error::domain("t0", t0, "finite"));
        }
        if samples.is_empty() {
            return Err(Error::InsufficientData("field trace has no samples".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain("field sample", *bad, "finite"));
        }
        Ok(Self { dt, t0, samples })
    }

    pub fn zeros(dt: f64, len: usize) -> Result<Self> {
        Self::new(dt, 0.0, vec![0.0; len])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    /// Time of the last sample.
    pub fn t_end(&self) -> f64 {
        self.t0 + (self.samples.len() - 1) as f64 * self.dt
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    /// Linearly interpolated field at `t`; clamps to the end samples.
    pub fn value_at(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.dt;
        if x <= 0.0 {
            return self.samples[0];
        }
        let k = x.floor() as usize;
        if k + 1 >= self.samples.len() {
            return self.samples[self.samples.len() - 1];
        }
        let frac = x - k as f64;
        self.samples[k] + frac * (self.samples[k + 1] - self.samples[k])
    }

    /// Trapezoidal `∫B dt` over `[t_start, t_end]` in G·s, with linear
    /// interpolation at both endpoints.
    pub fn integral(&self, t_start: f64, t_end: f64) -> Result<f64> {
        let slack = 1e-9 * self.dt;
        let (lo, hi) = (self.t0, self.t_end());
        if !(t_start < t_end) || t_start < lo - slack || t_end > hi + slack {
            return Err(Error::OutOfRange {
                start: t_start,
                end: t_end,
                lo,
                hi,
            });
        }
        let (a, b) = (t_start.max(lo), t_end.min(hi));
        let ia = (a - self.t0) / self.dt;
        let ib = (b - self.t0) / self.dt;
        // first sample index strictly inside (a, b)
        let first = ia.floor() as usize + 1;
        let last = ib.ceil() as usize - 1;
        let va = self.value_at(a);
        let vb = self.value_at(b);
        if first > last {
            return Ok(0.5 * (va + vb) * (b - a));
        }
        let mut acc = 0.5 * (va + self.samples[first]) * (self.time_of(first) - a);
        for k in first..last {
            acc += 0.5 * (self.samples[k] + self.samples[k + 1]) * self.dt;
        }
        acc += 0.5 * (self.samples[last] + vb) * (b - self.time_of(last));
        Ok(acc)
    }

    /// Mean field over a window.
    pub fn window_mean(&self, t_start: f64, t_end: f64) -> Result<f64> {
        Ok(self.integral(t_start, t_end)? / (t_end - t_start))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_s", "b_gauss"])?;
        for (i, b) in self.samples.iter().enumerate() {
            w.write_record([self.time_of(i).to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `t_s,b_gauss` CSV. Times must be uniformly spaced.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t_s", "b_gauss"] {
            return Err(Error::Format(format!(
                "expected header `t_s,b_gauss`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for row in r.deserialize::<(f64, f64)>() {
            let (t, b) = row?;
            times.push(t);
            values.push(b);
        }
        if times.len() < 2 {
            return Err(Error::InsufficientData("trace CSV needs at least two rows".into()));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        for (i, t) in times.iter().enumerate() {
            if (t - (times[0] + i as f64 * dt)).abs() > 1e-6 * dt {
                return Err(Error::Format(format!("non-uniform sample time at row {i}")));
            }
        }
        Self::new(dt, times[0], values)
    }
}

/// Parameters of the applied `1/f²` noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Amplitude spectral density at 1 Hz, G/√Hz.
    pub asd_at_1hz: f64,
    /// Coil low-pass corner, Hz.
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            asd_at_1hz: 18e-6,
            cutoff_hz: 2.4,
            sample_rate_hz: 1000.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.asd_at_1hz >= 0.0 && self.asd_at_1hz.is_finite()) {
            return Err(Error::domain("asd_at_1hz", self.asd_at_1hz, "[0, inf)"));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::domain("sample_rate_hz", self.sample_rate_hz, "(0, inf)"));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < self.sample_rate_hz / 2.0) {
            return Err(Error::domain("cutoff_hz", self.cutoff_hz, "(0, Nyquist)"));
        }
        Ok(())
    }

    /// Standard deviation of one walk step.
    pub fn step_sigma(&self) -> f64 {
        PI * self.asd_at_1hz * (2.0 / self.sample_rate_hz).sqrt()
    }
}

/// Random-walk field trace with `x₀ = 0` covering at least `duration` seconds.
pub fn synthesize_random_walk<R: Rng + ?Sized>(spec: &NoiseSpec, duration: f64, rng: &mut R) -> Result<FieldTrace> {
    spec.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::domain("duration", duration, "(0, inf) s"));
    }
    let dt = 1.0 / spec.sample_rate_hz;
    let steps = (duration / dt).ceil() as usize;
    let sigma = spec.step_sigma();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut x = 0.0;
    samples.push(x);
    for _ in 0..steps {
        let z: f64 = StandardNormal.sample(rng);
        x += sigma * z;
        samples.push(x);
    }
    FieldTrace::new(dt, 0.0, samples)
}

/// Single-pole recursive low-pass, `y_n = y_{n−1} + (1 − e^{−2π f_c dt})(x_n − y_{n−1})`,
/// started at `y₀ = x₀`.
pub fn apply_lowpass(trace: &FieldTrace, cutoff_hz: f64) -> Result<FieldTrace> {
    let nyquist = trace.sample_rate() / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::domain("cutoff_hz", cutoff_hz, "(0, Nyquist)"));
    }
    let k = 1.0 - (-2.0 * PI * cutoff_hz * trace.dt).exp();
    let mut y = trace.samples[0];
    let out = trace
        .samples
        .iter()
        .map(|&x| {
            y += k * (x - y);
            y
        })
        .collect();
    FieldTrace::new(trace.dt, trace.t0, out)
}

/// Commanded random walk passed through the coil response.
pub fn synthesize_applied_field<R: Rng + ?Sized>(spec: &NoiseSpec, duration: f64, rng: &mut R) -> Result<FieldTrace> {
    let raw = synthesize_random_walk(spec, duration, rng)?;
    apply_lowpass(&raw, spec.cutoff_hz)
}

/// One-sided power spectral density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub frequencies: Vec<f64>,
    /// G²/Hz.
    pub psd: Vec<f64>,
    pub segment_count: usize,
}

impl SpectrumEstimate {
    pub fn resolution(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0) - self.frequencies[0]
    }

    /// `∫ S(f) df` over the whole estimate.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.resolution()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["f_hz", "psd_gauss2_per_hz"])?;
        for (f, p) in self.frequencies.iter().zip(&self.psd) {
            w.write_record([f.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Least-squares slope and intercept of `log10 S` against `log10 f`
    /// over bins in `[f_lo, f_hi]`, skipping zero-power bins.
    pub fn loglog_fit(&self, f_lo: f64, f_hi: f64) -> Option<(f64, f64)> {
        let pts: Vec<(f64, f64)> = self
            .frequencies
            .iter()
            .zip(&self.psd)
            .filter(|(f, p)| **f >= f_lo && **f <= f_hi && **f > 0.0 && **p > 0.0)
            .map(|(f, p)| (f.log10(), p.log10()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        Some((slope, my - slope * mx))
    }

    /// Mean of `S(f)·f²` over `[f_lo, f_hi]`: the `A²` of an `A²/f²` spectrum.
    pub fn mean_f2_weighted(&self, f_lo: f64, f_hi: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .frequencies
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= f_lo && **f <= f_hi)
            .map(|(f, p)| p * f * f)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Welch estimate with a Hann window, per-segment mean removal and the
/// one-sided density normalization (`Σ S·Δf ≈ variance`).
pub fn welch_psd(trace: &FieldTrace, segment_length: usize, overlap_fraction: f64) -> Result<SpectrumEstimate> {
    if !(0.0..=0.9).contains(&overlap_fraction) {
        return Err(Error::domain("overlap_fraction", overlap_fraction, "[0, 0.9]"));
    }
    if segment_length < 4 || segment_length > trace.len() {
        return Err(Error::InsufficientData(format!(
            "segment length {segment_length} needs 4 <= n <= trace length {}",
            trace.len()
        )));
    }
    let n = segment_length;
    let hop = ((n as f64) * (1.0 - overlap_fraction)).round().max(1.0) as usize;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fs = trace.sample_rate();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut segments = 0;
    let mut start = 0;
    while start + n <= trace.len() {
        let seg = &trace.samples[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += hop;
    }

    let scale = 1.0 / (fs * window_power * segments as f64);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let frequencies = (0..bins).map(|k| k as f64 * fs / n as f64).collect();
    Ok(SpectrumEstimate {
        frequencies,
        psd,
        segment_count: segments,
    })
}
