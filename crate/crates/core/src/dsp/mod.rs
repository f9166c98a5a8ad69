//! Filtering and analytics: FIR design, SNR, dominant frequency, R peaks,
//! wave amplitudes and EEG bands.

mod ecg;
mod eeg;
mod fir;
mod snr;
mod spectrum;

pub use ecg::{
    detect_r_peaks, heart_rate, heart_rate_from_peaks, measure_waves, median_rr, EcgMeasurements,
    RPeakDetector,
};
pub use eeg::{classify_eeg, EegBand, EegBandReport, ALPHA_LO, BETA_LO, THETA_LO};
pub use fir::{
    apply_fir, design_fir, ChainState, FilterChain, FilterKind, FilterSpec, FirFilter, FirState,
    FirStream, ECG_HIGH_PASS_HZ, ECG_LOW_PASS_HZ, ECG_TAPS, EEG_BAND_HZ, EEG_TAPS, MIN_TAPS,
};
pub use snr::{snr, snr_of, SNR_CAP_DB};
pub use spectrum::{
    dominant_frequency, dominant_frequency_of, spectral_peak, Spectrum, MIN_SPECTRUM_SECONDS,
};
