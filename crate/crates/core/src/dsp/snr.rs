use crate::error::{Error, Result};
use crate::frame::SampleFrame;

/// Returned when the residual is exactly zero.
pub const SNR_CAP_DB: f64 = 120.0;

/// `10 log10(sum ref^2 / sum (test - ref)^2)` in dB.
pub fn snr(reference: &SampleFrame, test: &SampleFrame) -> Result<f64> {
    if reference.sample_rate != test.sample_rate {
        return Err(Error::invalid("SNR inputs must share a sample rate"));
    }
    snr_of(&reference.samples, &test.samples)
}

pub fn snr_of(reference: &[f64], test: &[f64]) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::invalid(format!(
            "SNR inputs differ in length: {} vs {}",
            reference.len(),
            test.len()
        )));
    }
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    let residual: f64 = reference
        .iter()
        .zip(test)
        .map(|(r, t)| (t - r) * (t - r))
        .sum();
    if residual == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok(10.0 * (signal / residual).log10())
}
