use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::frame::SampleFrame;
use crate::signal::offset_scale;

/// Eq. HB = f_ECG * f with f = 60 s/min: beat frequency in Hz to BPM.
pub fn heart_rate(f_ecg: f64) -> Result<f64> {
    if !(f_ecg.is_finite() && f_ecg >= 0.0) {
        return Err(Error::invalid(format!(
            "ECG frequency must be >= 0, got {f_ecg}"
        )));
    }
    Ok(f_ecg * 60.0)
}

/// Threshold-and-refractory R-peak detector.
///
/// Works on a slope-energy trace (squared central difference summed over
/// 80 ms) so tall T waves do not trip it; each detection is then moved to
/// the signal maximum nearby and refined to sub-sample precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RPeakDetector {
    /// Fraction of the running maximum a candidate must exceed.
    pub threshold: f64,
    /// Running-maximum window length, seconds (centred).
    pub window: f64,
    /// Minimum spacing between beats, seconds.
    pub refractory: f64,
}

impl Default for RPeakDetector {
    fn default() -> Self {
        RPeakDetector {
            threshold: 0.6,
            window: 2.0,
            refractory: 0.2,
        }
    }
}

const SLOPE_WINDOW_S: f64 = 0.04;
const SEARCH_S: f64 = 0.06;

fn sliding_max(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let hi = (i + half).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&j| x[j] <= x[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&j| j + half < i) {
            dq.pop_front();
        }
        *o = x[dq[0]];
    }
    out
}

impl RPeakDetector {
    /// R-peak times (seconds) in a contiguous record.
    pub fn detect(&self, frame: &SampleFrame) -> Vec<f64> {
        let x = &frame.samples;
        let fs = frame.sample_rate;
        let n = x.len();
        if n < 3 {
            return Vec::new();
        }
        let mut slope2 = vec![0.0; n];
        for i in 1..n - 1 {
            let d = 0.5 * (x[i + 1] - x[i - 1]);
            slope2[i] = d * d;
        }
        let w = ((SLOPE_WINDOW_S * fs).round() as usize).max(1);
        let mut energy = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n + w {
            if i < n {
                acc += slope2[i];
            }
            if i > 2 * w && i - 2 * w - 1 < n {
                acc -= slope2[i - 2 * w - 1];
            }
            if i >= w && i - w < n {
                energy[i - w] = acc.max(0.0);
            }
        }
        let half = ((self.window * fs / 2.0).round() as usize).max(1);
        let running = sliding_max(&energy, half);
        let floor = 1e-12;
        let refractory = ((self.refractory * fs).round() as usize).max(1);

        let mut picks: Vec<usize> = Vec::new();
        for i in 1..n - 1 {
            let e = energy[i];
            if e <= floor
                || e < self.threshold * running[i]
                || e < energy[i - 1]
                || e < energy[i + 1]
            {
                continue;
            }
            match picks.last_mut() {
                Some(last) if i - *last < refractory => {
                    if e > energy[*last] {
                        *last = i;
                    }
                }
                _ => picks.push(i),
            }
        }

        let search = ((SEARCH_S * fs).round() as usize).max(1);
        let mut times: Vec<f64> = Vec::with_capacity(picks.len());
        for p in picks {
            let lo = p.saturating_sub(search);
            let hi = (p + search).min(n - 1);
            let k = (lo..=hi)
                .max_by(|&a, &b| x[a].total_cmp(&x[b]))
                .unwrap_or(p);
            let delta = if k > 0 && k + 1 < n {
                let (a, b, c) = (x[k - 1], x[k], x[k + 1]);
                let den = a - 2.0 * b + c;
                if den < 0.0 {
                    (0.5 * (a - c) / den).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            } else {
                0.0
            };
            let t = frame.t0 + (k as f64 + delta) / fs;
            if times
                .last()
                .is_none_or(|&last| t - last >= 0.5 * self.refractory)
            {
                times.push(t);
            }
        }
        times
    }
}

/// R-peak times (seconds) of a stream, using the default detector.
pub fn detect_r_peaks<I>(frames: I) -> Vec<f64>
where
    I: IntoIterator<Item = SampleFrame>,
{
    match SampleFrame::concat(frames) {
        Ok(Some(record)) => RPeakDetector::default().detect(&record),
        _ => Vec::new(),
    }
}

/// Beat interval statistics: median RR (seconds).
pub fn median_rr(peaks: &[f64]) -> Option<f64> {
    let mut rr: Vec<f64> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    if rr.is_empty() {
        return None;
    }
    rr.sort_by(f64::total_cmp);
    let m = rr.len() / 2;
    Some(if rr.len().is_multiple_of(2) {
        0.5 * (rr[m - 1] + rr[m])
    } else {
        rr[m]
    })
}

/// Heart rate in BPM from the median RR interval.
pub fn heart_rate_from_peaks(peaks: &[f64]) -> Option<f64> {
    median_rr(peaks).filter(|rr| *rr > 0.0).map(|rr| 60.0 / rr)
}

/// Per-beat wave amplitudes averaged over a record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EcgMeasurements {
    /// Mean P amplitude above the PR baseline, mV.
    pub amp_p: f64,
    /// Mean R maximum minus S minimum, mV.
    pub excursion_rs: f64,
    /// Mean T amplitude above the PR baseline, mV.
    pub amp_t: f64,
    pub r_peak_times: Vec<f64>,
    /// From the median RR interval; absent with a single beat.
    pub heart_rate: Option<f64>,
    /// Beats whose measurement windows fit inside the record.
    pub beats: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Measures P, R-to-S and T amplitudes around each given R peak.
///
/// Search windows follow the beat model: P around `-0.2 s`, T around
/// `+0.3 s` (both compressed with heart rate), S within 80 ms after R.
/// Amplitudes are relative to the median of the PR segment.
pub fn measure_waves(frame: &SampleFrame, r_peaks: &[f64]) -> Result<EcgMeasurements> {
    let fs = frame.sample_rate;
    let x = &frame.samples;
    let rr = median_rr(r_peaks).unwrap_or(1.0);
    let k = offset_scale(60.0 / rr);
    let index = |t: f64| ((t - frame.t0) * fs).round() as i64;
    let slice = |a: f64, b: f64| -> Option<&[f64]> {
        let (i, j) = (index(a), index(b));
        (i >= 0 && j < x.len() as i64 && i <= j).then(|| &x[i as usize..=j as usize])
    };
    let max_of = |s: &[f64]| s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_of = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);

    let (mut p_sum, mut rs_sum, mut t_sum, mut beats) = (0.0, 0.0, 0.0, 0usize);
    for &r in r_peaks {
        let p_centre = r - 0.2 * k;
        let t_centre = r + 0.3 * k;
        let pr_start = (p_centre + 0.075).min(r - 0.075);
        let (Some(pr), Some(p_win), Some(r_win), Some(s_win), Some(t_win)) = (
            slice(pr_start, r - 0.065),
            slice(p_centre - 0.06, p_centre + 0.06),
            slice(r - 0.03, r + 0.03),
            slice(r, r + 0.08),
            slice(t_centre - 0.12, t_centre + 0.1),
        ) else {
            continue;
        };
        let baseline = median(&mut pr.to_vec());
        p_sum += max_of(p_win) - baseline;
        rs_sum += max_of(r_win) - min_of(s_win);
        t_sum += max_of(t_win) - baseline;
        beats += 1;
    }
    if beats == 0 {
        return Err(Error::NoBeats);
    }
    let n = beats as f64;
    Ok(EcgMeasurements {
        amp_p: p_sum / n,
        excursion_rs: rs_sum / n,
        amp_t: t_sum / n,
        r_peak_times: r_peaks.to_vec(),
        heart_rate: heart_rate_from_peaks(r_peaks),
        beats,
    })
}
