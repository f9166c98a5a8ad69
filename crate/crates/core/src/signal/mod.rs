//! Deterministic ECG/EEG test-signal synthesis.
//!
//! Generators are lazy: samples are computed as frames are pulled, and all
//! randomness comes from the seeded [`NoiseSpec`].

mod ecg;
mod noise;

pub use ecg::{
    offset_scale, AmplitudeOverrides, EcgMorphology, Lead, LeadAmplitudes, LeadConfig,
    WaveAmplitudes, WaveShape, UNGROUNDED_NOISE_FACTOR,
};
pub use noise::{add_noise, AddNoise, NoiseSource, NoiseSpec, Tone};

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::frame::SampleFrame;

pub const DEFAULT_ECG_RATE: f64 = 250.0;
pub const DEFAULT_EEG_RATE: f64 = 256.0;
pub const MIN_ECG_RATE: f64 = 100.0;
pub const DEFAULT_FRAME_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Ecg(EcgMorphology),
    Eeg { freq: f64, amp: f64 },
}

impl Source {
    fn value_at(&self, t: f64) -> f64 {
        match self {
            Source::Ecg(m) => m.value_at(t),
            Source::Eeg { freq, amp } => amp * (TAU * freq * t).sin(),
        }
    }
}

/// Configured generator. Call [`Synth::frames`] to pull samples.
#[derive(Debug, Clone)]
pub struct Synth {
    source: Source,
    sample_rate: f64,
    total: usize,
    noise: NoiseSpec,
    noise_factor: f64,
    channel_id: u8,
    frame_len: usize,
}

fn check_duration_and_rate(sample_rate: f64, duration: f64) -> Result<()> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!(
            "duration must be positive, got {duration}"
        )));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::invalid(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    Ok(())
}

/// Synthesises a periodic ECG for `duration` seconds.
pub fn synth_ecg(
    morph: EcgMorphology,
    lead: LeadConfig,
    sample_rate: f64,
    duration: f64,
) -> Result<Synth> {
    check_duration_and_rate(sample_rate, duration)?;
    if sample_rate < MIN_ECG_RATE {
        return Err(Error::invalid(format!(
            "ECG sample rate must be >= {MIN_ECG_RATE} Hz"
        )));
    }
    morph.validate()?;
    Ok(Synth {
        source: Source::Ecg(morph),
        sample_rate,
        total: (duration * sample_rate).round() as usize,
        noise: NoiseSpec::default(),
        noise_factor: lead.noise_factor(),
        channel_id: 1,
        frame_len: DEFAULT_FRAME_LEN,
    })
}

/// Synthesises an EEG rhythm as a sinusoid at `dominant_freq`.
pub fn synth_eeg(dominant_freq: f64, amp: f64, sample_rate: f64, duration: f64) -> Result<Synth> {
    check_duration_and_rate(sample_rate, duration)?;
    if !(dominant_freq > 0.0 && dominant_freq < sample_rate / 2.0) {
        return Err(Error::invalid(format!(
            "dominant frequency {dominant_freq} Hz must lie in (0, {}) Hz",
            sample_rate / 2.0
        )));
    }
    if !(amp.is_finite() && amp >= 0.0) {
        return Err(Error::invalid("amplitude must be >= 0"));
    }
    Ok(Synth {
        source: Source::Eeg {
            freq: dominant_freq,
            amp,
        },
        sample_rate,
        total: (duration * sample_rate).round() as usize,
        noise: NoiseSpec::default(),
        noise_factor: 1.0,
        channel_id: 2,
        frame_len: DEFAULT_FRAME_LEN,
    })
}

impl Synth {
    pub fn with_noise(mut self, noise: NoiseSpec) -> Result<Self> {
        noise.validate()?;
        self.noise = noise;
        Ok(self)
    }

    pub fn with_channel(mut self, channel_id: u8) -> Self {
        self.channel_id = channel_id;
        self
    }

    pub fn with_frame_len(mut self, frame_len: usize) -> Self {
        self.frame_len = frame_len.max(1);
        self
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn duration(&self) -> f64 {
        self.total as f64 / self.sample_rate
    }

    /// Noise actually mixed in, including the electrode grounding factor.
    pub fn effective_noise(&self) -> NoiseSpec {
        NoiseSpec {
            broadband_std: self.noise.broadband_std * self.noise_factor,
            ..self.noise
        }
    }

    /// Ground-truth R peak times (ECG only; empty for EEG).
    pub fn peak_times(&self) -> Vec<f64> {
        match &self.source {
            Source::Ecg(m) => m.r_peak_times(self.duration()),
            Source::Eeg { .. } => Vec::new(),
        }
    }

    pub fn frames(&self) -> SynthStream {
        let noise = self.effective_noise();
        SynthStream {
            source: self.source,
            sample_rate: self.sample_rate,
            total: self.total,
            next: 0,
            seq: 0,
            channel_id: self.channel_id,
            frame_len: self.frame_len,
            // validated in the constructors / with_noise
            noise: (!noise.is_zero())
                .then(|| NoiseSource::new(noise).expect("validated noise spec")),
        }
    }

    /// The whole signal as one frame.
    pub fn record(&self) -> SampleFrame {
        let mut all = SampleFrame {
            channel_id: self.channel_id,
            seq: 0,
            sample_rate: self.sample_rate,
            t0: 0.0,
            samples: Vec::with_capacity(self.total),
        };
        for f in self.frames() {
            all.samples.extend_from_slice(&f.samples);
        }
        all
    }
}

/// Pull-based frame iterator over a [`Synth`].
#[derive(Debug, Clone)]
pub struct SynthStream {
    source: Source,
    sample_rate: f64,
    total: usize,
    next: usize,
    seq: u32,
    channel_id: u8,
    frame_len: usize,
    noise: Option<NoiseSource>,
}

impl Iterator for SynthStream {
    type Item = SampleFrame;

    fn next(&mut self) -> Option<SampleFrame> {
        if self.next >= self.total {
            return None;
        }
        let end = (self.next + self.frame_len).min(self.total);
        let samples = (self.next..end)
            .map(|n| self.source.value_at(n as f64 / self.sample_rate))
            .collect();
        let mut frame = SampleFrame {
            channel_id: self.channel_id,
            seq: self.seq,
            sample_rate: self.sample_rate,
            t0: self.next as f64 / self.sample_rate,
            samples,
        };
        if let Some(noise) = &mut self.noise {
            noise.apply(&mut frame);
        }
        self.next = end;
        self.seq = self.seq.wrapping_add(1);
        Some(frame)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.total - self.next).div_ceil(self.frame_len);
        (n, Some(n))
    }
}

impl ExactSizeIterator for SynthStream {}

#[cfg(test)]
mod tests {
    use super::*;

    fn lead2(hr: f64) -> Synth {
        let lead = LeadConfig::new(Lead::Lead2);
        synth_ecg(
            EcgMorphology::for_lead(&lead, hr).unwrap(),
            lead,
            250.0,
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn ecg_length_and_peaks() {
        let s = lead2(60.0);
        assert_eq!(s.record().samples.len(), 2500);
        let peaks = s.peak_times();
        assert_eq!(peaks.len(), 10);
        for w in peaks.windows(2) {
            assert!((w[1] - w[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frames_are_sequential() {
        let frames: Vec<_> = lead2(60.0).with_frame_len(64).frames().collect();
        assert_eq!(frames.len(), 40);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.seq, i as u32);
            f.validate().unwrap();
        }
    }

    #[test]
    fn argument_errors() {
        let lead = LeadConfig::new(Lead::Lead1);
        let m = EcgMorphology::for_lead(&lead, 60.0).unwrap();
        assert!(synth_ecg(m, lead, 250.0, 0.0).is_err());
        assert!(synth_ecg(m, lead, 50.0, 1.0).is_err());
        assert!(synth_ecg(m, lead, -250.0, 1.0).is_err());
        assert!(synth_eeg(0.0, 0.05, 256.0, 4.0).is_err());
        assert!(synth_eeg(128.0, 0.05, 256.0, 4.0).is_err());
        assert!(synth_eeg(10.0, 0.05, 256.0, -1.0).is_err());
    }

    #[test]
    fn ungrounded_lead_multiplies_noise_floor() {
        let lead = LeadConfig::new(Lead::Lead1).ungrounded();
        let m = EcgMorphology::for_lead(&lead, 60.0).unwrap();
        let s = synth_ecg(m, lead, 250.0, 1.0)
            .unwrap()
            .with_noise(NoiseSpec::broadband(0.01, 1))
            .unwrap();
        assert!((s.effective_noise().broadband_std - 0.05).abs() < 1e-12);
    }
}
