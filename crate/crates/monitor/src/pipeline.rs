//! Per-channel analytics: filter chain, sliding window, metrics.
//!
//! Time is derived from the sample count, not the wall clock, so a live
//! stream and a replay of its recording produce identical results.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use wban_core::dsp::{
    classify_eeg, dominant_frequency, heart_rate, heart_rate_from_peaks, measure_waves, ChainState,
    EegBand, FilterChain, FilterSpec, RPeakDetector,
};
use wban_core::SampleFrame;

use crate::config::SignalKind;
use crate::error::{MonitorError, Result};
use crate::rules::{Metric, MetricValue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub channel_id: u8,
    pub kind: SignalKind,
    /// Stream time at the end of the analysis window, seconds.
    pub time: f64,
    /// BPM from the median RR interval.
    pub heart_rate: Option<f64>,
    /// BPM from the dominant frequency.
    pub spectral_heart_rate: Option<f64>,
    /// mV.
    pub rs_excursion: Option<f64>,
    /// Hz.
    pub dominant_freq: Option<f64>,
    pub eeg_band: Option<EegBand>,
}

impl MetricSnapshot {
    pub fn empty(channel_id: u8, kind: SignalKind, time: f64) -> Self {
        MetricSnapshot {
            channel_id,
            kind,
            time,
            heart_rate: None,
            spectral_heart_rate: None,
            rs_excursion: None,
            dominant_freq: None,
            eeg_band: None,
        }
    }

    pub fn value(&self, metric: Metric) -> Option<MetricValue> {
        match metric {
            Metric::HeartRate => self.heart_rate.map(MetricValue::Number),
            Metric::RsExcursion => self.rs_excursion.map(MetricValue::Number),
            Metric::EegBand => self.eeg_band.map(MetricValue::Band),
        }
    }
}

/// Metrics for one window. `filtered` and `raw` must be aligned sample for
/// sample; peaks are found on `filtered`, wave amplitudes read from `raw`.
pub fn compute_metrics(
    kind: SignalKind,
    filtered: &SampleFrame,
    raw: &SampleFrame,
) -> MetricSnapshot {
    let time = filtered.t0 + filtered.duration();
    let mut snap = MetricSnapshot::empty(filtered.channel_id, kind, time);
    let dominant = dominant_frequency(filtered).ok().filter(|f| *f > 0.0);
    snap.dominant_freq = dominant;
    match kind {
        SignalKind::Ecg => {
            let peaks = RPeakDetector::default().detect(filtered);
            snap.heart_rate = heart_rate_from_peaks(&peaks);
            snap.spectral_heart_rate = dominant.and_then(|f| heart_rate(f).ok());
            snap.rs_excursion = measure_waves(raw, &peaks)
                .ok()
                .filter(|m| m.beats > 0)
                .map(|m| m.excursion_rs);
        }
        SignalKind::Eeg => {
            snap.eeg_band = dominant.and_then(|f| classify_eeg(f).ok()).map(|r| r.band);
        }
    }
    snap
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub window_seconds: f64,
    pub hop_seconds: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_seconds: 8.0,
            hop_seconds: 1.0,
        }
    }
}

/// What one frame produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineOutput {
    /// Filtered samples, timestamps compensated for the chain delay.
    /// Absent while the filters warm up.
    pub filtered: Option<SampleFrame>,
    pub metrics: Vec<MetricSnapshot>,
    /// The frame did not continue the previous one; state was reset.
    pub discontinuity: bool,
}

struct Running {
    sample_rate: f64,
    chain: ChainState,
    delay: usize,
    warmup: usize,
    /// Samples fed through the chain since the last reset.
    fed: u64,
    /// Stream index of the first sample fed since the last reset.
    origin: u64,
    /// Raw samples waiting to line up with the delayed filter output.
    raw_delay: VecDeque<f64>,
    raw: VecDeque<f64>,
    filt: VecDeque<f64>,
    window: usize,
    hop: usize,
    /// Samples since the last metrics; `None` until the window first fills.
    since_emit: Option<usize>,
}

/// Streaming analyser for one channel.
pub struct ChannelPipeline {
    channel_id: u8,
    kind: SignalKind,
    filters: Vec<FilterSpec>,
    window: WindowConfig,
    next_seq: Option<u32>,
    /// Stream index of the next sample.
    clock: u64,
    running: Option<Running>,
}

impl ChannelPipeline {
    /// `filters` empty selects the default chain for `kind`.
    pub fn new(
        channel_id: u8,
        kind: SignalKind,
        filters: Vec<FilterSpec>,
        window: WindowConfig,
    ) -> Self {
        ChannelPipeline {
            channel_id,
            kind,
            filters,
            window,
            next_seq: None,
            clock: 0,
            running: None,
        }
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn sample_rate(&self) -> Option<f64> {
        self.running.as_ref().map(|r| r.sample_rate)
    }

    fn start(&self, sample_rate: f64) -> Result<Running> {
        let specs = if self.filters.is_empty() {
            self.kind.default_filters(sample_rate)
        } else {
            self.filters.clone()
        };
        if let Some(s) = specs.iter().find(|s| s.sample_rate != sample_rate) {
            return Err(MonitorError::Config(format!(
                "channel {}: filter designed for {} Hz but stream runs at {sample_rate} Hz",
                self.channel_id, s.sample_rate
            )));
        }
        let chain = FilterChain::from_specs(&specs)?;
        let window = (self.window.window_seconds * sample_rate).round() as usize;
        let hop = ((self.window.hop_seconds * sample_rate).round() as usize).max(1);
        Ok(Running {
            sample_rate,
            delay: chain.delay_samples(),
            warmup: chain.warmup_samples(),
            chain: chain.state(),
            fed: 0,
            origin: self.clock,
            raw_delay: VecDeque::new(),
            raw: VecDeque::with_capacity(window),
            filt: VecDeque::with_capacity(window),
            window,
            hop,
            since_emit: None,
        })
    }

    /// Feeds one frame. `frame.t0` is ignored; time comes from the sample
    /// count, and a `seq` gap or rate change restarts the filters.
    pub fn process(&mut self, frame: &SampleFrame) -> Result<PipelineOutput> {
        let mut out = PipelineOutput::default();
        if let Some(expected) = self.next_seq {
            if frame.seq != expected {
                out.discontinuity = true;
                // assume the missing frames were the size of this one
                let missing = frame.seq.wrapping_sub(expected) as u64;
                if missing < 1 << 20 {
                    self.clock += missing * frame.samples.len() as u64;
                }
                self.running = None;
            }
        }
        if self
            .running
            .as_ref()
            .is_some_and(|r| r.sample_rate != frame.sample_rate)
        {
            out.discontinuity = true;
            self.running = None;
        }
        self.next_seq = Some(frame.seq.wrapping_add(1));
        if self.running.is_none() {
            self.running = Some(self.start(frame.sample_rate)?);
        }
        let channel_id = self.channel_id;
        let kind = self.kind;
        let r = self.running.as_mut().expect("started above");
        let fs = r.sample_rate;
        let mut filtered = Vec::with_capacity(frame.samples.len());
        let mut first_out: Option<u64> = None;
        for &x in &frame.samples {
            let y = r.chain.step(x);
            r.raw_delay.push_back(x);
            r.fed += 1;
            if r.raw_delay.len() <= r.delay {
                continue;
            }
            let raw = r.raw_delay.pop_front().expect("non-empty");
            if r.fed <= r.warmup as u64 {
                continue;
            }
            // output sample index in stream time
            let index = r.origin + r.fed - 1 - r.delay as u64;
            first_out.get_or_insert(index);
            filtered.push(y);
            r.filt.push_back(y);
            r.raw.push_back(raw);
            if r.filt.len() > r.window {
                r.filt.pop_front();
                r.raw.pop_front();
            }
            if let Some(n) = r.since_emit.as_mut() {
                *n += 1;
            }
            if r.filt.len() == r.window && r.since_emit.is_none_or(|n| n >= r.hop) {
                r.since_emit = Some(0);
                let start = (index + 1 - r.window as u64) as f64 / fs;
                let f = SampleFrame {
                    channel_id,
                    seq: 0,
                    sample_rate: fs,
                    t0: start,
                    samples: r.filt.iter().copied().collect(),
                };
                let w = SampleFrame {
                    samples: r.raw.iter().copied().collect(),
                    ..f.clone()
                };
                out.metrics.push(compute_metrics(kind, &f, &w));
            }
        }
        if let Some(first) = first_out {
            out.filtered = Some(SampleFrame {
                channel_id,
                seq: frame.seq,
                sample_rate: fs,
                t0: first as f64 / fs,
                samples: filtered,
            });
        }
        self.clock += frame.samples.len() as u64;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wban_core::signal::{synth_ecg, synth_eeg, EcgMorphology, Lead, LeadConfig};

    fn ecg_frames(hr: f64, secs: f64) -> Vec<SampleFrame> {
        let cfg = LeadConfig::new(Lead::Lead2);
        synth_ecg(EcgMorphology::for_lead(&cfg, hr).unwrap(), cfg, 250.0, secs)
            .unwrap()
            .frames()
            .collect()
    }

    #[test]
    fn first_metrics_after_warmup_plus_window() {
        let mut p = ChannelPipeline::new(1, SignalKind::Ecg, vec![], WindowConfig::default());
        let mut metrics = Vec::new();
        for f in ecg_frames(60.0, 12.0) {
            metrics.extend(p.process(&f).unwrap().metrics);
        }
        // 200 warm-up samples then an 8 s window: first at 8.4 s (delay-compensated), then every second
        assert_eq!(metrics.len(), 4);
        assert!(
            (metrics[0].time - (8.0 + 100.0 / 250.0)).abs() < 1e-9,
            "{}",
            metrics[0].time
        );
        for w in metrics.windows(2) {
            assert!((w[1].time - w[0].time - 1.0).abs() < 1e-9);
        }
        for m in &metrics {
            assert!((m.heart_rate.unwrap() - 60.0).abs() < 1.0);
            assert!((m.spectral_heart_rate.unwrap() - 60.0).abs() < 1.0);
            assert!((m.rs_excursion.unwrap() - 1.4).abs() < 0.07);
        }
    }

    #[test]
    fn filtered_output_is_time_aligned() {
        let mut p = ChannelPipeline::new(1, SignalKind::Ecg, vec![], WindowConfig::default());
        let frames = ecg_frames(60.0, 4.0);
        let mut out = Vec::new();
        for f in &frames {
            if let Some(fr) = p.process(f).unwrap().filtered {
                out.push(fr);
            }
        }
        let all = SampleFrame::concat(out).unwrap().unwrap();
        let peak = all
            .samples
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let t = all.time_of(peak);
        // R peaks of the synthetic train sit at k + 0.5 s
        assert!(
            ((t - 0.5) - (t - 0.5).round()).abs() <= 0.008,
            "peak at {t}"
        );
    }

    #[test]
    fn eeg_band_reported() {
        let mut p = ChannelPipeline::new(2, SignalKind::Eeg, vec![], WindowConfig::default());
        let frames: Vec<SampleFrame> = synth_eeg(10.0, 0.05, 256.0, 10.0)
            .unwrap()
            .frames()
            .collect();
        let metrics: Vec<_> = frames
            .iter()
            .flat_map(|f| p.process(f).unwrap().metrics)
            .collect();
        assert!(!metrics.is_empty());
        assert!(metrics.iter().all(|m| m.eeg_band == Some(EegBand::Alpha)));
    }

    #[test]
    fn seq_gap_restarts() {
        let mut p = ChannelPipeline::new(1, SignalKind::Ecg, vec![], WindowConfig::default());
        let mut frames = ecg_frames(60.0, 2.0);
        frames.remove(3);
        let outs: Vec<_> = frames.iter().map(|f| p.process(f).unwrap()).collect();
        assert!(outs[3].discontinuity);
        assert_eq!(outs.iter().filter(|o| o.discontinuity).count(), 1);
    }

    #[test]
    fn mismatched_filter_rate_is_an_error() {
        let specs = vec![FilterSpec::low_pass(40.0, 101, 500.0)];
        let mut p = ChannelPipeline::new(1, SignalKind::Ecg, specs, WindowConfig::default());
        assert!(p.process(&ecg_frames(60.0, 1.0)[0]).is_err());
    }
}
