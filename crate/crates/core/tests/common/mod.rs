#![allow(dead_code)]

use std::f64::consts::TAU;

/// Amplitude of the `freq` component of `x` by direct correlation.
pub fn tone_amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &v) in x.iter().enumerate() {
        let w = TAU * freq * n as f64 / fs;
        re += v * w.cos();
        im -= v * w.sin();
    }
    2.0 * (re * re + im * im).sqrt() / x.len() as f64
}

/// |H(f)| of an FIR by summing the coefficients against e^{-jwn}.
pub fn fir_response(h: &[f64], freq: f64, fs: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &c) in h.iter().enumerate() {
        let w = TAU * freq * n as f64 / fs;
        re += c * w.cos();
        im -= c * w.sin();
    }
    (re * re + im * im).sqrt()
}

/// Frequency of the largest bin of a plain O(n^2) DFT, DC excluded.
pub fn dft_peak(x: &[f64], fs: f64) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let mut best = (0.0, 0usize);
    for k in 1..n / 2 {
        let m = tone_amplitude(&centered, k as f64 * fs / n as f64, fs);
        if m > best.0 {
            best = (m, k);
        }
    }
    best.1 as f64 * fs / n as f64
}

/// Bitwise CRC-16 with polynomial 0x1021 and initial value 0xFFFF.
pub fn crc16_ccitt_false(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &b in bytes {
        crc ^= (b as u16) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
        }
    }
    crc
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
