//! Walkie-talkie audio link model: additive noise, gain, band-limiting and
//! cascaded first-order all-pass sections for phase distortion.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dsp::{FilterSpec, FirFilter, FirState};
use crate::error::{Error, Result};
use crate::frame::SampleFrame;
use crate::signal::{NoiseSource, NoiseSpec};

pub const DEFAULT_LOWER_CORNER: f64 = 8.0;
pub const DEFAULT_UPPER_CORNER: f64 = 45.0;
pub const DEFAULT_GAIN: f64 = 1.0;
pub const DEFAULT_PHASE_STAGES: [f64; 2] = [12.0, 30.0];
pub const DEFAULT_NOISE_STD: f64 = 0.005;
/// Band-limiting FIR length in seconds of signal.
pub const BAND_LIMIT_SECONDS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub gain: f64,
    /// High-pass corner in Hz; 0 disables it.
    pub lower_corner: f64,
    /// Low-pass corner in Hz; `None` means Nyquist (disabled).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_corner: Option<f64>,
    /// Corner frequencies of the all-pass sections, Hz.
    #[serde(default)]
    pub phase_stages: Vec<f64>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            gain: DEFAULT_GAIN,
            lower_corner: DEFAULT_LOWER_CORNER,
            upper_corner: Some(DEFAULT_UPPER_CORNER),
            phase_stages: DEFAULT_PHASE_STAGES.to_vec(),
            noise: NoiseSpec::broadband(DEFAULT_NOISE_STD, 0x7a1c),
        }
    }
}

impl ChannelModel {
    pub fn identity() -> Self {
        ChannelModel {
            gain: 1.0,
            lower_corner: 0.0,
            upper_corner: None,
            phase_stages: Vec::new(),
            noise: NoiseSpec::default(),
        }
    }

    /// Built-in presets: `identity` and `default`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Self::identity()),
            "default" => Some(Self::default()),
            _ => None,
        }
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let nyquist = sample_rate / 2.0;
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(Error::invalid("channel gain must be > 0"));
        }
        let upper = self.upper_corner.unwrap_or(nyquist);
        if !(self.lower_corner.is_finite() && self.lower_corner >= 0.0) {
            return Err(Error::invalid("lower corner must be >= 0"));
        }
        if !(upper.is_finite() && upper <= nyquist && self.lower_corner < upper) {
            return Err(Error::invalid(format!(
                "channel corners must satisfy 0 <= lower < upper <= {nyquist} Hz"
            )));
        }
        if self
            .phase_stages
            .iter()
            .any(|&f| !(f.is_finite() && f > 0.0 && f < nyquist))
        {
            return Err(Error::invalid("all-pass corners must lie in (0, Nyquist)"));
        }
        self.noise.validate()
    }

    /// The band-limiting filter for `sample_rate`, scaled to unit peak gain,
    /// or `None` when both corners are open.
    pub fn band_limit(&self, sample_rate: f64) -> Result<Option<FirFilter>> {
        self.validate(sample_rate)?;
        let nyquist = sample_rate / 2.0;
        let has_low = self.lower_corner > 0.0;
        let has_high = self.upper_corner.is_some_and(|u| u < nyquist);
        let taps = ((BAND_LIMIT_SECONDS * sample_rate).round() as usize) | 1;
        let taps = taps.max(crate::dsp::MIN_TAPS);
        let spec = match (has_low, has_high) {
            (false, false) => return Ok(None),
            (true, false) => FilterSpec::high_pass(self.lower_corner, taps, sample_rate),
            (false, true) => {
                FilterSpec::low_pass(self.upper_corner.unwrap_or(nyquist), taps, sample_rate)
            }
            (true, true) => FilterSpec::band_pass(
                self.lower_corner,
                self.upper_corner.unwrap_or(nyquist),
                taps,
                sample_rate,
            ),
        };
        let filter = spec.design()?;
        // scale so that |H| <= 1 everywhere
        let grid = 64 * taps;
        let peak = (0..=grid)
            .map(|i| filter.magnitude(nyquist * i as f64 / grid as f64))
            .fold(0.0, f64::max);
        let scale = 1.0 / (peak * (1.0 + 1e-5));
        let coefficients = filter.coefficients().iter().map(|c| c * scale).collect();
        Ok(Some(FirFilter::from_parts(spec, coefficients)))
    }

    pub fn is_identity(&self) -> bool {
        self.gain == 1.0
            && self.lower_corner == 0.0
            && self.upper_corner.is_none()
            && self.phase_stages.is_empty()
            && self.noise.is_zero()
    }

    /// Transmits a whole record.
    pub fn transmit_record(&self, input: &SampleFrame) -> Result<SampleFrame> {
        let out = transmit(std::iter::once(input.clone()), self)?
            .next()
            .expect("one frame in, one frame out")?;
        Ok(out)
    }
}

/// First-order digital all-pass with -90 degrees phase at its corner.
#[derive(Debug, Clone)]
struct AllPass {
    a: f64,
    x1: f64,
    y1: f64,
}

impl AllPass {
    fn new(corner: f64, sample_rate: f64) -> Self {
        let t = (PI * corner / sample_rate).tan();
        AllPass {
            a: (t - 1.0) / (t + 1.0),
            x1: 0.0,
            y1: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.x1 - self.a * self.y1;
        self.x1 = x;
        self.y1 = y;
        y
    }
}

struct ChannelState {
    sample_rate: f64,
    noise: Option<NoiseSource>,
    band: Option<FirState>,
    stages: Vec<AllPass>,
}

/// Frame iterator produced by [`transmit`].
pub struct ChannelStream<I> {
    inner: I,
    model: ChannelModel,
    state: Option<ChannelState>,
}

impl<I: Iterator<Item = SampleFrame>> ChannelStream<I> {
    fn init(&mut self, sample_rate: f64) -> Result<()> {
        self.model.validate(sample_rate)?;
        let noise = if self.model.noise.is_zero() {
            None
        } else {
            Some(NoiseSource::new(self.model.noise)?)
        };
        self.state = Some(ChannelState {
            sample_rate,
            noise,
            band: self.model.band_limit(sample_rate)?.map(|f| f.state()),
            stages: self
                .model
                .phase_stages
                .iter()
                .map(|&fc| AllPass::new(fc, sample_rate))
                .collect(),
        });
        Ok(())
    }
}

impl<I: Iterator<Item = SampleFrame>> Iterator for ChannelStream<I> {
    type Item = Result<SampleFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut frame = self.inner.next()?;
        if self.state.is_none() {
            if let Err(e) = self.init(frame.sample_rate) {
                return Some(Err(e));
            }
        }
        let gain = self.model.gain;
        let st = self.state.as_mut().expect("initialised above");
        if frame.sample_rate != st.sample_rate {
            return Some(Err(Error::invalid("sample rate changed mid-stream")));
        }
        if let Some(noise) = &mut st.noise {
            noise.apply(&mut frame);
        }
        for v in frame.samples.iter_mut() {
            let mut y = *v * gain;
            if let Some(band) = &mut st.band {
                y = band.step(y);
            }
            for stage in st.stages.iter_mut() {
                y = stage.step(y);
            }
            *v = y;
        }
        Some(Ok(frame))
    }
}

/// Passes frames through the channel: noise, gain, band-limit, all-pass.
pub fn transmit<I>(frames: I, model: &ChannelModel) -> Result<ChannelStream<I::IntoIter>>
where
    I: IntoIterator<Item = SampleFrame>,
{
    model.noise.validate()?;
    if !(model.gain.is_finite() && model.gain > 0.0) {
        return Err(Error::invalid("channel gain must be > 0"));
    }
    Ok(ChannelStream {
        inner: frames.into_iter(),
        model: model.clone(),
        state: None,
    })
}

pub const PHASE_BAND_HZ: (f64, f64) = (5.0, 40.0);
const PHASE_MIN_REL_MAG: f64 = 0.02;

fn fft(buf: &mut [Complex<f64>]) {
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

/// Lag (samples) at which `output` best matches `input`; positive means
/// the output is late.
pub fn best_lag(input: &[f64], output: &[f64]) -> i64 {
    let n = input.len();
    let nfft = (2 * n).next_power_of_two();
    let to_c = |s: &[f64]| {
        let mut v: Vec<Complex<f64>> = s.iter().map(|&x| Complex::new(x, 0.0)).collect();
        v.resize(nfft, Complex::new(0.0, 0.0));
        v
    };
    let (mut a, mut b) = (to_c(input), to_c(output));
    fft(&mut a);
    fft(&mut b);
    let mut c: Vec<Complex<f64>> = b.iter().zip(&a).map(|(y, x)| y * x.conj()).collect();
    FftPlanner::new().plan_fft_inverse(nfft).process(&mut c);
    let max_lag = (n / 2) as i64;
    (-max_lag..=max_lag)
        .max_by(|&p, &q| {
            let at = |l: i64| c[l.rem_euclid(nfft as i64) as usize].re;
            at(p).total_cmp(&at(q))
        })
        .unwrap_or(0)
}

/// RMS deviation (radians) of the cross-spectrum phase from its best-fit
/// linear phase over 5-40 Hz.
///
/// The integer-sample delay is removed first by aligning on the
/// cross-correlation peak; the affine fit absorbs any fractional remainder.
pub fn phase_distortion(input: &SampleFrame, output: &SampleFrame) -> Result<f64> {
    if input.sample_rate != output.sample_rate {
        return Err(Error::invalid("phase comparison needs equal sample rates"));
    }
    phase_distortion_of(&input.samples, &output.samples, input.sample_rate)
}

pub fn phase_distortion_of(input: &[f64], output: &[f64], sample_rate: f64) -> Result<f64> {
    if input.len() != output.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            input.len(),
            output.len()
        )));
    }
    if input.len() < 16 {
        return Err(Error::invalid("record too short for phase analysis"));
    }
    let lag = best_lag(input, output);
    let (x, y) = if lag >= 0 {
        let l = lag as usize;
        (&input[..input.len() - l], &output[l..])
    } else {
        let l = (-lag) as usize;
        (&input[l..], &output[..output.len() - l])
    };
    let n = x.len();
    let nfft = (2 * n).next_power_of_two();
    let window = |i: usize| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
    let spectrum = |s: &[f64]| {
        let mut v: Vec<Complex<f64>> = s
            .iter()
            .enumerate()
            .map(|(i, &v)| Complex::new(v * window(i), 0.0))
            .collect();
        v.resize(nfft, Complex::new(0.0, 0.0));
        fft(&mut v);
        v
    };
    let (sx, sy) = (spectrum(x), spectrum(y));
    let bin_hz = sample_rate / nfft as f64;
    let hi = PHASE_BAND_HZ.1.min(sample_rate / 2.0);
    let bins: Vec<usize> = ((PHASE_BAND_HZ.0 / bin_hz).ceil() as usize
        ..=(hi / bin_hz).floor() as usize)
        .filter(|&k| k < nfft / 2)
        .collect();
    let max_x = bins.iter().map(|&k| sx[k].norm()).fold(0.0, f64::max);
    let max_y = bins.iter().map(|&k| sy[k].norm()).fold(0.0, f64::max);
    let used: Vec<usize> = bins
        .into_iter()
        .filter(|&k| {
            sx[k].norm() > PHASE_MIN_REL_MAG * max_x && sy[k].norm() > PHASE_MIN_REL_MAG * max_y
        })
        .collect();
    if used.len() < 3 {
        return Err(Error::invalid(
            "no usable spectral content between 5 and 40 Hz",
        ));
    }
    let mut freqs = Vec::with_capacity(used.len());
    let mut phases: Vec<f64> = Vec::with_capacity(used.len());
    for &k in &used {
        let c = sy[k] * sx[k].conj();
        let mut ph = c.im.atan2(c.re);
        if let Some(&prev) = phases.last() {
            while ph - prev > PI {
                ph -= 2.0 * PI;
            }
            while ph - prev < -PI {
                ph += 2.0 * PI;
            }
        }
        freqs.push(k as f64 * bin_hz);
        phases.push(ph);
    }
    let m = freqs.len() as f64;
    let mf = freqs.iter().sum::<f64>() / m;
    let mp = phases.iter().sum::<f64>() / m;
    let sff: f64 = freqs.iter().map(|f| (f - mf) * (f - mf)).sum();
    let sfp: f64 = freqs
        .iter()
        .zip(&phases)
        .map(|(f, p)| (f - mf) * (p - mp))
        .sum();
    let slope = if sff > 0.0 { sfp / sff } else { 0.0 };
    let ss: f64 = freqs
        .iter()
        .zip(&phases)
        .map(|(f, p)| (p - mp - slope * (f - mf)).powi(2))
        .sum();
    Ok((ss / m).sqrt())
}
