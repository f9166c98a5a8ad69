use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EegBand {
    Delta,
    Theta,
    Alpha,
    Beta,
}

/// Lower edges (inclusive) of theta, alpha and beta in Hz.
pub const THETA_LO: f64 = 4.0;
pub const ALPHA_LO: f64 = 7.0;
pub const BETA_LO: f64 = 13.0;

impl EegBand {
    pub fn of(freq: f64) -> EegBand {
        if freq < THETA_LO {
            EegBand::Delta
        } else if freq < ALPHA_LO {
            EegBand::Theta
        } else if freq < BETA_LO {
            EegBand::Alpha
        } else {
            EegBand::Beta
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EegBand::Delta => "delta",
            EegBand::Theta => "theta",
            EegBand::Alpha => "alpha",
            EegBand::Beta => "beta",
        }
    }
}

impl std::fmt::Display for EegBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EegBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "delta" => Ok(EegBand::Delta),
            "theta" => Ok(EegBand::Theta),
            "alpha" => Ok(EegBand::Alpha),
            "beta" => Ok(EegBand::Beta),
            other => Err(Error::invalid(format!("unknown EEG band '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EegBandReport {
    pub dominant_freq: f64,
    pub band: EegBand,
}

pub fn classify_eeg(dominant_freq: f64) -> Result<EegBandReport> {
    if !(dominant_freq.is_finite() && dominant_freq > 0.0) {
        return Err(Error::invalid(format!(
            "dominant frequency must be > 0, got {dominant_freq}"
        )));
    }
    Ok(EegBandReport {
        dominant_freq,
        band: EegBand::of(dominant_freq),
    })
}
