//! Whole-file analysis, using the same metric code as the live service.

use anyhow::{bail, Result};
use serde::Serialize;
use std::fmt;

use wban_core::dsp::{measure_waves, snr_of, EegBand, FilterChain, RPeakDetector};
use wban_core::SampleFrame;
use wban_monitor::config::SignalKind;
use wban_monitor::pipeline::compute_metrics;

use crate::signal_file::Signal;

/// Below this peak-to-peak amplitude (mV) an unlabelled file is taken as EEG.
pub const EEG_MAX_PP: f64 = 0.3;

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub kind: SignalKind,
    pub sample_rate: f64,
    pub seconds: f64,
    /// Seconds analysed after trimming filter edges.
    pub analysed_seconds: f64,
    pub heart_rate: Option<f64>,
    pub spectral_heart_rate: Option<f64>,
    pub dominant_freq: Option<f64>,
    pub p_amplitude: Option<f64>,
    pub rs_excursion: Option<f64>,
    pub t_amplitude: Option<f64>,
    pub beats: Option<usize>,
    pub eeg_band: Option<EegBand>,
    pub snr: Option<SnrReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SnrReport {
    pub input_db: f64,
    pub filtered_db: f64,
    pub gain_db: f64,
}

pub fn infer_kind(signal: &Signal) -> SignalKind {
    if let Some(k) = signal.kind {
        return k;
    }
    let (lo, hi) = signal
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi - lo < EEG_MAX_PP {
        SignalKind::Eeg
    } else {
        SignalKind::Ecg
    }
}

pub fn analyze(signal: &Signal, kind: SignalKind, reference: Option<&Signal>) -> Result<Report> {
    let fs = signal.sample_rate;
    let chain = FilterChain::from_specs(&kind.default_filters(fs))?;
    let filtered = chain.filter_aligned(&signal.samples);
    // the aligned output is only exact once every tap sees real input
    let edge = chain.warmup_samples();
    let n = signal.samples.len();
    if n <= 2 * edge + (2.0 * fs) as usize {
        bail!(
            "signal too short: {:.2} s, need more than {:.2} s",
            signal.duration(),
            (2 * edge) as f64 / fs + 2.0
        );
    }
    let span = edge..n - edge;
    let frame =
        |s: &[f64]| SampleFrame::new(signal.channel_id, 0, fs, edge as f64 / fs, s.to_vec());
    let filt = frame(&filtered[span.clone()])?;
    let raw = frame(&signal.samples[span.clone()])?;

    let m = compute_metrics(kind, &filt, &raw);
    let mut report = Report {
        kind,
        sample_rate: fs,
        seconds: signal.duration(),
        analysed_seconds: raw.duration(),
        heart_rate: m.heart_rate,
        spectral_heart_rate: m.spectral_heart_rate,
        dominant_freq: m.dominant_freq,
        p_amplitude: None,
        rs_excursion: None,
        t_amplitude: None,
        beats: None,
        eeg_band: m.eeg_band,
        snr: None,
    };
    if kind == SignalKind::Ecg {
        let peaks = RPeakDetector::default().detect(&filt);
        if let Ok(w) = measure_waves(&raw, &peaks) {
            if w.beats > 0 {
                report.p_amplitude = Some(w.amp_p);
                report.rs_excursion = Some(w.excursion_rs);
                report.t_amplitude = Some(w.amp_t);
            }
            report.beats = Some(w.beats);
        }
    }
    if let Some(r) = reference {
        if r.sample_rate != fs || r.samples.len() != n {
            bail!("reference must have the same rate and length as the input");
        }
        let clean = &r.samples[span.clone()];
        let input_db = snr_of(clean, &signal.samples[span.clone()])?;
        let filtered_db = snr_of(clean, &filtered[span])?;
        report.snr = Some(SnrReport {
            input_db,
            filtered_db,
            gain_db: filtered_db - input_db,
        });
    }
    Ok(report)
}

fn opt(v: Option<f64>, prec: usize, unit: &str) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.prec$} {unit}"))
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "kind:               {}", self.kind.as_str())?;
        writeln!(f, "sample rate:        {} Hz", self.sample_rate)?;
        writeln!(
            f,
            "duration:           {:.2} s ({:.2} s analysed)",
            self.seconds, self.analysed_seconds
        )?;
        writeln!(
            f,
            "dominant frequency: {}",
            opt(self.dominant_freq, 3, "Hz")
        )?;
        match self.kind {
            SignalKind::Ecg => {
                writeln!(f, "heart rate:         {}", opt(self.heart_rate, 1, "BPM"))?;
                writeln!(
                    f,
                    "spectral HR:        {}",
                    opt(self.spectral_heart_rate, 1, "BPM")
                )?;
                writeln!(f, "P amplitude:        {}", opt(self.p_amplitude, 3, "mV"))?;
                writeln!(f, "R->S excursion:     {}", opt(self.rs_excursion, 3, "mV"))?;
                writeln!(f, "T amplitude:        {}", opt(self.t_amplitude, 3, "mV"))?;
                writeln!(f, "beats measured:     {}", self.beats.unwrap_or(0))?;
            }
            SignalKind::Eeg => {
                writeln!(
                    f,
                    "EEG band:           {}",
                    self.eeg_band.map_or("n/a", EegBand::as_str)
                )?;
            }
        }
        if let Some(s) = &self.snr {
            writeln!(f, "SNR input:          {:.2} dB", s.input_db)?;
            writeln!(f, "SNR filtered:       {:.2} dB", s.filtered_db)?;
            writeln!(f, "SNR gain:           {:.2} dB", s.gain_db)?;
        }
        Ok(())
    }
}
