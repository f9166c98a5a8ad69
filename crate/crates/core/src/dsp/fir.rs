use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::frame::SampleFrame;

pub const MIN_TAPS: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    LowPass,
    HighPass,
    BandPass,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::LowPass => "low_pass",
            FilterKind::HighPass => "high_pass",
            FilterKind::BandPass => "band_pass",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low_pass" | "lowpass" | "lp" => Ok(FilterKind::LowPass),
            "high_pass" | "highpass" | "hp" => Ok(FilterKind::HighPass),
            "band_pass" | "bandpass" | "bp" => Ok(FilterKind::BandPass),
            other => Err(Error::invalid(format!("unknown filter kind '{other}'"))),
        }
    }
}

/// Design parameters of a windowed-sinc FIR filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub cutoff_lo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_hi: Option<f64>,
    pub taps: usize,
    pub sample_rate: f64,
}

impl FilterSpec {
    pub fn low_pass(cutoff: f64, taps: usize, sample_rate: f64) -> Self {
        FilterSpec {
            kind: FilterKind::LowPass,
            cutoff_lo: cutoff,
            cutoff_hi: None,
            taps,
            sample_rate,
        }
    }

    pub fn high_pass(cutoff: f64, taps: usize, sample_rate: f64) -> Self {
        FilterSpec {
            kind: FilterKind::HighPass,
            cutoff_lo: cutoff,
            cutoff_hi: None,
            taps,
            sample_rate,
        }
    }

    pub fn band_pass(lo: f64, hi: f64, taps: usize, sample_rate: f64) -> Self {
        FilterSpec {
            kind: FilterKind::BandPass,
            cutoff_lo: lo,
            cutoff_hi: Some(hi),
            taps,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if self.taps.is_multiple_of(2) || self.taps < MIN_TAPS {
            return Err(Error::invalid(format!(
                "taps must be odd and >= {MIN_TAPS}, got {}",
                self.taps
            )));
        }
        let nyquist = self.sample_rate / 2.0;
        let in_range = |f: f64| f.is_finite() && f > 0.0 && f < nyquist;
        if !in_range(self.cutoff_lo) {
            return Err(Error::invalid(format!(
                "cutoff {} Hz outside (0, {nyquist}) Hz",
                self.cutoff_lo
            )));
        }
        match (self.kind, self.cutoff_hi) {
            (FilterKind::BandPass, Some(hi)) => {
                if !in_range(hi) {
                    return Err(Error::invalid(format!(
                        "cutoff {hi} Hz outside (0, {nyquist}) Hz"
                    )));
                }
                if hi <= self.cutoff_lo {
                    return Err(Error::invalid("band-pass needs cutoff_lo < cutoff_hi"));
                }
            }
            (FilterKind::BandPass, None) => {
                return Err(Error::invalid("band-pass needs cutoff_hi"))
            }
            (_, Some(_)) => return Err(Error::invalid("cutoff_hi applies to band-pass only")),
            (_, None) => {}
        }
        Ok(())
    }

    pub fn design(&self) -> Result<FirFilter> {
        self.validate()?;
        let half = (self.taps - 1) / 2;
        let fs = self.sample_rate;
        let mut h = match self.kind {
            FilterKind::LowPass => lowpass_half(self.cutoff_lo / fs, half),
            FilterKind::HighPass => {
                let mut h: Vec<f64> = lowpass_half(self.cutoff_lo / fs, half)
                    .iter()
                    .map(|c| -c)
                    .collect();
                h[0] += 1.0;
                h
            }
            FilterKind::BandPass => {
                let hi = lowpass_half(self.cutoff_hi.unwrap_or_default() / fs, half);
                let lo = lowpass_half(self.cutoff_lo / fs, half);
                let mut h: Vec<f64> = hi.iter().zip(&lo).map(|(a, b)| a - b).collect();
                let centre = 0.5 * (self.cutoff_lo + self.cutoff_hi.unwrap_or_default()) / fs;
                let gain = half_amplitude(&h, centre).abs();
                h.iter_mut().for_each(|c| *c /= gain);
                h
            }
        };
        // mirror the half-response so the taps are exactly symmetric
        let mut coefficients = Vec::with_capacity(self.taps);
        coefficients.extend(h.iter().rev());
        coefficients.extend(h.drain(1..));
        Ok(FirFilter {
            spec: *self,
            coefficients,
        })
    }

    /// Plain-text (TOML) form of the spec.
    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("filter spec serialises")
    }

    pub fn from_config_str(s: &str) -> Result<Self> {
        let spec: FilterSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Hamming-windowed sinc low-pass, centre tap first, normalised to unit DC gain.
fn lowpass_half(fc: f64, half: usize) -> Vec<f64> {
    let mut h: Vec<f64> = (0..=half)
        .map(|m| {
            let window = 0.54 + 0.46 * (PI * m as f64 / half as f64).cos();
            let sinc = if m == 0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * m as f64).sin() / (PI * m as f64)
            };
            window * sinc
        })
        .collect();
    let dc = h[0] + 2.0 * h[1..].iter().sum::<f64>();
    h.iter_mut().for_each(|c| *c /= dc);
    h
}

/// Zero-phase amplitude of a symmetric filter given its half (centre first).
fn half_amplitude(half: &[f64], f_norm: f64) -> f64 {
    let w = 2.0 * PI * f_norm;
    half[0]
        + 2.0
            * half
                .iter()
                .enumerate()
                .skip(1)
                .map(|(m, c)| c * (w * m as f64).cos())
                .sum::<f64>()
}

/// Linear-phase FIR filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    spec: FilterSpec,
    coefficients: Vec<f64>,
}

pub fn design_fir(
    kind: FilterKind,
    cutoff_lo: f64,
    cutoff_hi: Option<f64>,
    taps: usize,
    sample_rate: f64,
) -> Result<FirFilter> {
    FilterSpec {
        kind,
        cutoff_lo,
        cutoff_hi,
        taps,
        sample_rate,
    }
    .design()
}

impl FirFilter {
    /// Wraps arbitrary symmetric coefficients (used for derived filters).
    pub(crate) fn from_parts(spec: FilterSpec, coefficients: Vec<f64>) -> Self {
        FirFilter { spec, coefficients }
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn kind(&self) -> FilterKind {
        self.spec.kind
    }

    pub fn taps(&self) -> usize {
        self.coefficients.len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.spec.sample_rate
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Group delay in samples, `(taps - 1) / 2`.
    pub fn delay_samples(&self) -> usize {
        (self.coefficients.len() - 1) / 2
    }

    pub fn group_delay(&self) -> f64 {
        self.delay_samples() as f64 / self.spec.sample_rate
    }

    /// |H(f)| by direct evaluation of the coefficient DTFT.
    pub fn magnitude(&self, f: f64) -> f64 {
        let w = 2.0 * PI * f / self.spec.sample_rate;
        let (re, im) = self
            .coefficients
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, c)| {
                (re + c * (w * n as f64).cos(), im - c * (w * n as f64).sin())
            });
        re.hypot(im)
    }

    pub fn magnitude_db(&self, f: f64) -> f64 {
        20.0 * self.magnitude(f).log10()
    }

    pub fn state(&self) -> FirState {
        FirState::new(self.coefficients.clone())
    }

    /// Zero-state filtering of a whole record; output has the input's length.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut st = self.state();
        input.iter().map(|&x| st.step(x)).collect()
    }

    /// Like [`FirFilter::filter`] but shifted back by the group delay, so
    /// output sample `i` lines up with input sample `i`.
    pub fn filter_aligned(&self, input: &[f64]) -> Vec<f64> {
        let d = self.delay_samples();
        let mut st = self.state();
        let mut out: Vec<f64> = input
            .iter()
            .copied()
            .chain(std::iter::repeat_n(0.0, d))
            .map(|x| st.step(x))
            .collect();
        out.drain(..d.min(out.len()));
        out.truncate(input.len());
        out
    }
}

/// Direct-form delay line.
#[derive(Debug, Clone)]
pub struct FirState {
    coefficients: Vec<f64>,
    // doubled ring buffer so the newest `taps` samples are always contiguous
    ring: Vec<f64>,
    pos: usize,
}

impl FirState {
    fn new(coefficients: Vec<f64>) -> Self {
        let n = coefficients.len();
        FirState {
            coefficients,
            ring: vec![0.0; 2 * n],
            pos: 0,
        }
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let n = self.coefficients.len();
        self.pos = if self.pos == 0 { n - 1 } else { self.pos - 1 };
        self.ring[self.pos] = x;
        self.ring[self.pos + n] = x;
        // ring[pos + k] holds x[n - k]
        self.coefficients
            .iter()
            .zip(&self.ring[self.pos..self.pos + n])
            .map(|(c, v)| c * v)
            .sum()
    }

    pub fn reset(&mut self) {
        self.ring.iter_mut().for_each(|v| *v = 0.0);
        self.pos = 0;
    }
}

/// Frame-wise filtering produced by [`apply_fir`].
pub struct FirStream<I> {
    inner: I,
    state: FirState,
    sample_rate: f64,
    shift: f64,
}

impl<I: Iterator<Item = SampleFrame>> Iterator for FirStream<I> {
    type Item = Result<SampleFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut frame = self.inner.next()?;
        if frame.sample_rate != self.sample_rate {
            return Some(Err(Error::invalid(format!(
                "filter designed for {} Hz, frame sampled at {} Hz",
                self.sample_rate, frame.sample_rate
            ))));
        }
        for v in frame.samples.iter_mut() {
            *v = self.state.step(*v);
        }
        frame.t0 -= self.shift;
        Some(Ok(frame))
    }
}

/// Streams frames through `filter` with zero initial state.
///
/// With `compensate_delay` the output timestamps are moved earlier by the
/// group delay; sample values are unaffected.
pub fn apply_fir<I>(filter: &FirFilter, frames: I, compensate_delay: bool) -> FirStream<I::IntoIter>
where
    I: IntoIterator<Item = SampleFrame>,
{
    FirStream {
        inner: frames.into_iter(),
        state: filter.state(),
        sample_rate: filter.sample_rate(),
        shift: if compensate_delay {
            filter.group_delay()
        } else {
            0.0
        },
    }
}

/// Filters applied in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterChain {
    filters: Vec<FirFilter>,
}

pub const ECG_HIGH_PASS_HZ: f64 = 0.5;
pub const ECG_LOW_PASS_HZ: f64 = 40.0;
pub const ECG_TAPS: usize = 101;
pub const EEG_BAND_HZ: (f64, f64) = (1.0, 30.0);
pub const EEG_TAPS: usize = 201;

impl FilterChain {
    pub fn new(filters: Vec<FirFilter>) -> Result<Self> {
        if let Some(first) = filters.first() {
            if filters
                .iter()
                .any(|f| f.sample_rate() != first.sample_rate())
            {
                return Err(Error::invalid(
                    "all filters in a chain must share a sample rate",
                ));
            }
        }
        Ok(FilterChain { filters })
    }

    pub fn from_specs(specs: &[FilterSpec]) -> Result<Self> {
        Self::new(
            specs
                .iter()
                .map(FilterSpec::design)
                .collect::<Result<_>>()?,
        )
    }

    pub fn default_ecg_specs(sample_rate: f64) -> Vec<FilterSpec> {
        vec![
            FilterSpec::high_pass(ECG_HIGH_PASS_HZ, ECG_TAPS, sample_rate),
            FilterSpec::low_pass(ECG_LOW_PASS_HZ, ECG_TAPS, sample_rate),
        ]
    }

    pub fn default_eeg_specs(sample_rate: f64) -> Vec<FilterSpec> {
        vec![FilterSpec::band_pass(
            EEG_BAND_HZ.0,
            EEG_BAND_HZ.1,
            EEG_TAPS,
            sample_rate,
        )]
    }

    /// High-pass 0.5 Hz then low-pass 40 Hz, 101 taps each.
    pub fn default_ecg(sample_rate: f64) -> Result<Self> {
        Self::from_specs(&Self::default_ecg_specs(sample_rate))
    }

    /// Band-pass 1-30 Hz, 201 taps.
    pub fn default_eeg(sample_rate: f64) -> Result<Self> {
        Self::from_specs(&Self::default_eeg_specs(sample_rate))
    }

    pub fn filters(&self) -> &[FirFilter] {
        &self.filters
    }

    pub fn sample_rate(&self) -> Option<f64> {
        self.filters.first().map(FirFilter::sample_rate)
    }

    pub fn delay_samples(&self) -> usize {
        self.filters.iter().map(FirFilter::delay_samples).sum()
    }

    /// Samples before the output is free of the zero-state start-up transient.
    pub fn warmup_samples(&self) -> usize {
        self.filters.iter().map(|f| f.taps() - 1).sum()
    }

    pub fn state(&self) -> ChainState {
        ChainState {
            stages: self.filters.iter().map(FirFilter::state).collect(),
        }
    }

    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut st = self.state();
        input.iter().map(|&x| st.step(x)).collect()
    }

    pub fn filter_aligned(&self, input: &[f64]) -> Vec<f64> {
        let d = self.delay_samples();
        let mut st = self.state();
        let mut out: Vec<f64> = input
            .iter()
            .copied()
            .chain(std::iter::repeat_n(0.0, d))
            .map(|x| st.step(x))
            .collect();
        out.drain(..d.min(out.len()));
        out.truncate(input.len());
        out
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    stages: Vec<FirState>,
}

impl ChainState {
    pub fn step(&mut self, x: f64) -> f64 {
        self.stages.iter_mut().fold(x, |v, st| st.step(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_designs() {
        assert!(design_fir(FilterKind::LowPass, 40.0, None, 100, 250.0).is_err());
        assert!(design_fir(FilterKind::LowPass, 40.0, None, 9, 250.0).is_err());
        assert!(design_fir(FilterKind::LowPass, 125.0, None, 101, 250.0).is_err());
        assert!(design_fir(FilterKind::HighPass, 0.0, None, 101, 250.0).is_err());
        assert!(design_fir(FilterKind::BandPass, 13.0, Some(7.0), 201, 256.0).is_err());
        assert!(design_fir(FilterKind::BandPass, 7.0, None, 201, 256.0).is_err());
        assert!(design_fir(FilterKind::LowPass, 7.0, Some(9.0), 201, 256.0).is_err());
    }

    #[test]
    fn dc_gains() {
        let hp = design_fir(FilterKind::HighPass, 0.5, None, 101, 250.0).unwrap();
        assert!(hp.coefficients().iter().sum::<f64>().abs() <= 1e-6);
        let lp = design_fir(FilterKind::LowPass, 40.0, None, 101, 250.0).unwrap();
        assert!((lp.coefficients().iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn aligned_filter_keeps_length() {
        let lp = FilterSpec::low_pass(40.0, 101, 250.0).design().unwrap();
        let x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.05).sin()).collect();
        let y = lp.filter_aligned(&x);
        assert_eq!(y.len(), x.len());
        let raw = lp.filter(&x);
        assert_eq!(y[..200], raw[50..250]);
    }

    #[test]
    fn config_round_trip() {
        let spec = FilterSpec::band_pass(7.0, 13.0, 201, 256.0);
        let text = spec.to_config_string();
        assert!(text.contains("band_pass"));
        assert_eq!(FilterSpec::from_config_str(&text).unwrap(), spec);
        assert!(FilterSpec::from_config_str(
            "kind = \"low_pass\"\ncutoff_lo = 500.0\ntaps = 11\nsample_rate = 250.0"
        )
        .is_err());
    }

    #[test]
    fn rate_mismatch_is_an_error() {
        let lp = FilterSpec::low_pass(40.0, 101, 250.0).design().unwrap();
        let frame = SampleFrame::new(1, 0, 500.0, 0.0, vec![0.0; 10]).unwrap();
        let mut s = apply_fir(&lp, vec![frame], false);
        assert!(matches!(s.next(), Some(Err(Error::InvalidArgument(_)))));
    }
}
