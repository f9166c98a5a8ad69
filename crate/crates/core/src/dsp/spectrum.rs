use num_complex::Complex;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::frame::SampleFrame;

/// Shortest record accepted by [`dominant_frequency`].
pub const MIN_SPECTRUM_SECONDS: f64 = 2.0;

const PAD_FACTOR: usize = 4;
// A lower harmonic must reach this fraction of the peak to count.
const HARMONIC_FLOOR: f64 = 0.25;
// The gap between two harmonics must dip below this fraction of the smaller one.
const VALLEY_RATIO: f64 = 0.5;
// Harmonic position tolerance, in native DFT bins.
const HARMONIC_TOLERANCE_BINS: f64 = 0.3;
// Resolvable fundamentals span at least this many native bins.
const MIN_FUNDAMENTAL_BINS: f64 = 3.0;
const MAX_HARMONIC: usize = 40;

/// Magnitude spectrum of a mean-removed, Hann-windowed, zero-padded record.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    /// Hz per bin of the padded transform.
    pub bin_hz: f64,
    /// Hz per bin of the unpadded record (true resolution).
    pub resolution_hz: f64,
}

impl Spectrum {
    pub fn compute(samples: &[f64], sample_rate: f64) -> Self {
        let n = samples.len();
        let nfft = (n * PAD_FACTOR).next_power_of_two();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let denom = (n.max(2) - 1) as f64;
        let mut buf: Vec<Complex<f64>> = samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / denom).cos();
                Complex::new((x - mean) * w, 0.0)
            })
            .collect();
        buf.resize(nfft, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
        Spectrum {
            magnitudes: buf[..=nfft / 2].iter().map(|c| c.norm()).collect(),
            bin_hz: sample_rate / nfft as f64,
            resolution_hz: sample_rate / n as f64,
        }
    }

    fn bin_of(&self, f: f64) -> usize {
        ((f / self.bin_hz).round() as usize).min(self.magnitudes.len() - 1)
    }

    /// Parabolic refinement around bin `k`; returns (frequency, magnitude).
    fn refine(&self, k: usize) -> (f64, f64) {
        let m = &self.magnitudes;
        if k == 0 || k + 1 >= m.len() {
            return (k as f64 * self.bin_hz, m[k]);
        }
        let (a, b, c) = (m[k - 1], m[k], m[k + 1]);
        let denom = a - 2.0 * b + c;
        let delta = if denom.abs() > f64::EPSILON {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        ((k as f64 + delta) * self.bin_hz, b - 0.25 * (a - c) * delta)
    }

    fn is_local_max(&self, k: usize) -> bool {
        let m = &self.magnitudes;
        k > 0 && k + 1 < m.len() && m[k] >= m[k - 1] && m[k] >= m[k + 1] && m[k] > 0.0
    }

    /// Largest local maximum above DC.
    pub fn peak(&self) -> Option<(f64, f64)> {
        (1..self.magnitudes.len() - 1)
            .filter(|&k| self.is_local_max(k))
            .max_by(|&a, &b| self.magnitudes[a].total_cmp(&self.magnitudes[b]))
            .map(|k| self.refine(k))
    }

    /// Strongest local maximum within `tol` Hz of `f`.
    fn peak_near(&self, f: f64, tol: f64) -> Option<(f64, f64)> {
        let lo = self.bin_of((f - tol).max(0.0)).max(1);
        let hi = self.bin_of(f + tol);
        (lo..=hi)
            .filter(|&k| self.is_local_max(k))
            .max_by(|&a, &b| self.magnitudes[a].total_cmp(&self.magnitudes[b]))
            .map(|k| self.refine(k))
            .filter(|(fk, _)| (fk - f).abs() <= tol)
    }

    fn min_between(&self, f_lo: f64, f_hi: f64) -> f64 {
        let (a, b) = (self.bin_of(f_lo), self.bin_of(f_hi));
        self.magnitudes[a.min(b)..=a.max(b)]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Fundamental of the harmonic series containing the strongest peak.
    ///
    /// The strongest peak is taken as harmonic `d` of a fundamental
    /// `f_peak / d` when a distinct spectral line sits exactly one spacing
    /// below it (with a valley in between); the largest such `d` wins. A
    /// lone tone has no such neighbour and is returned unchanged.
    pub fn fundamental(&self) -> Option<f64> {
        let (f_peak, a_peak) = self.peak()?;
        let tol = HARMONIC_TOLERANCE_BINS * self.resolution_hz;
        let max_d = ((f_peak / (MIN_FUNDAMENTAL_BINS * self.resolution_hz)).floor() as usize)
            .min(MAX_HARMONIC);
        for d in (2..=max_d).rev() {
            let f0 = f_peak / d as f64;
            let Some((_, a_lower)) = self.peak_near(f_peak - f0, tol) else {
                continue;
            };
            if a_lower < HARMONIC_FLOOR * a_peak {
                continue;
            }
            let valley = self.min_between(f_peak - 0.75 * f0, f_peak - 0.25 * f0);
            if valley <= VALLEY_RATIO * a_lower.min(a_peak) {
                return Some(f0);
            }
        }
        Some(f_peak)
    }
}

/// Dominant frequency of a record in Hz.
///
/// Magnitude-DFT peak (DC excluded) with parabolic interpolation; when the
/// peak is one line of a harmonic series the series' fundamental is
/// reported, so a pulse train yields its repetition rate.
pub fn dominant_frequency(frame: &SampleFrame) -> Result<f64> {
    dominant_frequency_of(&frame.samples, frame.sample_rate)
}

pub fn dominant_frequency_of(samples: &[f64], sample_rate: f64) -> Result<f64> {
    if sample_rate.is_nan() || sample_rate <= 0.0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let seconds = samples.len() as f64 / sample_rate;
    if seconds < MIN_SPECTRUM_SECONDS {
        return Err(Error::invalid(format!(
            "need at least {MIN_SPECTRUM_SECONDS} s of samples, got {seconds:.3} s"
        )));
    }
    Spectrum::compute(samples, sample_rate)
        .fundamental()
        .ok_or_else(|| Error::invalid("record has no spectral peak above DC"))
}

/// Largest-bin frequency without harmonic resolution.
pub fn spectral_peak(samples: &[f64], sample_rate: f64) -> Option<f64> {
    Spectrum::compute(samples, sample_rate)
        .peak()
        .map(|(f, _)| f)
}
