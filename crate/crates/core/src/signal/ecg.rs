use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian bump: peak amplitude (mV), standard deviation (s) and centre
/// offset from the R peak (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveShape {
    pub amp: f64,
    pub width: f64,
    pub offset: f64,
}

impl WaveShape {
    pub const fn new(amp: f64, width: f64, offset: f64) -> Self {
        WaveShape { amp, width, offset }
    }

    #[inline]
    fn eval(&self, dt: f64) -> f64 {
        let z = (dt - self.offset) / self.width;
        self.amp * (-0.5 * z * z).exp()
    }
}

/// One heartbeat as a sum of six Gaussian waves, repeated at `heart_rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcgMorphology {
    pub p: WaveShape,
    pub q: WaveShape,
    pub r: WaveShape,
    pub s: WaveShape,
    pub t: WaveShape,
    pub u: WaveShape,
    /// Beats per minute.
    pub heart_rate: f64,
}

// Offsets at 60 BPM; P, T and U are pulled towards R at faster rates.
const P_OFFSET: f64 = -0.20;
const QS_OFFSET: f64 = 0.04;
const T_OFFSET: f64 = 0.30;
const U_OFFSET: f64 = 0.45;

/// Compression applied to the P/T/U offsets at a given heart rate.
///
/// Square-root shortening with the RR interval, capped at 1 and limited so
/// the P..U span stays inside 90% of one beat period.
pub fn offset_scale(heart_rate: f64) -> f64 {
    let period = 60.0 / heart_rate;
    let span = U_OFFSET - P_OFFSET;
    period.sqrt().min(1.0).min(0.9 * period / span)
}

impl EcgMorphology {
    /// Morphology with the lead's default amplitudes at `heart_rate`.
    ///
    /// Lead amplitudes fix P, R-to-S and T. The R/S split is 85/15 of the
    /// R-to-S excursion; Q (-0.1 mV) and U (0.05 mV) are scaled by the lead's
    /// R-to-S relative to Lead II.
    pub fn for_lead(lead: &LeadConfig, heart_rate: f64) -> Result<Self> {
        let amps = lead.amplitudes();
        let k = offset_scale(heart_rate);
        let morph = EcgMorphology {
            p: WaveShape::new(amps.p, 0.025, P_OFFSET * k),
            q: WaveShape::new(amps.q, 0.010, -QS_OFFSET),
            r: WaveShape::new(amps.r, 0.010, 0.0),
            s: WaveShape::new(amps.s, 0.010, QS_OFFSET),
            t: WaveShape::new(amps.t, 0.045, T_OFFSET * k),
            u: WaveShape::new(amps.u, 0.030, U_OFFSET * k),
            heart_rate,
        };
        morph.validate()?;
        Ok(morph)
    }

    pub fn waves(&self) -> [WaveShape; 6] {
        [self.p, self.q, self.r, self.s, self.t, self.u]
    }

    pub fn period(&self) -> f64 {
        60.0 / self.heart_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.heart_rate > 20.0 && self.heart_rate < 300.0) {
            return Err(Error::invalid(format!(
                "heart rate {} outside (20, 300) BPM",
                self.heart_rate
            )));
        }
        let waves = self.waves();
        if waves
            .iter()
            .any(|w| !(w.width > 0.0 && w.width.is_finite()))
        {
            return Err(Error::invalid("wave widths must be positive"));
        }
        if waves
            .iter()
            .any(|w| !w.amp.is_finite() || !w.offset.is_finite())
        {
            return Err(Error::invalid("wave parameters must be finite"));
        }
        if self.r.offset != 0.0 {
            return Err(Error::invalid("R wave offset must be 0"));
        }
        if !waves.windows(2).all(|w| w[0].offset < w[1].offset) {
            return Err(Error::invalid(
                "wave offsets must be ordered P < Q < R < S < T < U",
            ));
        }
        if self.r.amp <= 0.0 || waves.iter().any(|w| w.amp.abs() > self.r.amp) {
            return Err(Error::invalid(
                "R must be the largest-magnitude positive wave",
            ));
        }
        Ok(())
    }

    /// Noise-free amplitude at time `t` for a beat train with R peaks at
    /// `(k + 1/2) * period`, k = 0, 1, ... (and the implied beats before 0).
    pub fn value_at(&self, t: f64) -> f64 {
        let period = self.period();
        let reach = self
            .waves()
            .iter()
            .map(|w| w.offset.abs() + 6.0 * w.width)
            .fold(0.0, f64::max);
        let k_lo = ((t - reach) / period - 0.5).floor() as i64;
        let k_hi = ((t + reach) / period - 0.5).ceil() as i64;
        let mut v = 0.0;
        for k in k_lo..=k_hi {
            let dt = t - (k as f64 + 0.5) * period;
            if dt.abs() > reach {
                continue;
            }
            for w in self.waves() {
                v += w.eval(dt);
            }
        }
        v
    }

    /// R peak times within `[0, duration)`.
    pub fn r_peak_times(&self, duration: f64) -> Vec<f64> {
        let period = self.period();
        (0..)
            .map(|k| (k as f64 + 0.5) * period)
            .take_while(|&t| t < duration)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lead {
    Lead1,
    Lead2,
    Lead3,
}

/// P, R-to-S and T amplitude differences (mV) for one lead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadAmplitudes {
    pub p: f64,
    pub rs: f64,
    pub t: f64,
}

impl Lead {
    pub fn from_number(n: u8) -> Option<Lead> {
        match n {
            1 => Some(Lead::Lead1),
            2 => Some(Lead::Lead2),
            3 => Some(Lead::Lead3),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Lead::Lead1 => 1,
            Lead::Lead2 => 2,
            Lead::Lead3 => 3,
        }
    }

    /// Amplitudes recorded by a clinical ECG machine.
    pub fn machine_amplitudes(self) -> LeadAmplitudes {
        match self {
            Lead::Lead1 => LeadAmplitudes {
                p: 0.2,
                rs: 0.55,
                t: 0.3,
            },
            Lead::Lead2 => LeadAmplitudes {
                p: 0.3,
                rs: 1.4,
                t: 0.5,
            },
            Lead::Lead3 => LeadAmplitudes {
                p: 0.2,
                rs: 0.8,
                t: 0.3,
            },
        }
    }

    /// Amplitudes recorded by the wearable capture module.
    pub fn module_amplitudes(self) -> LeadAmplitudes {
        match self {
            Lead::Lead1 => LeadAmplitudes {
                p: 0.2,
                rs: 0.53,
                t: 0.25,
            },
            Lead::Lead2 => LeadAmplitudes {
                p: 0.38,
                rs: 1.1,
                t: 0.45,
            },
            Lead::Lead3 => LeadAmplitudes {
                p: 0.25,
                rs: 0.8,
                t: 0.28,
            },
        }
    }
}

/// Per-wave amplitude overrides in mV.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AmplitudeOverrides {
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub r: Option<f64>,
    pub s: Option<f64>,
    pub t: Option<f64>,
    pub u: Option<f64>,
}

/// Resolved per-wave amplitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveAmplitudes {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub t: f64,
    pub u: f64,
}

/// Electrode placement for one limb lead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadConfig {
    pub lead: Lead,
    pub common_ground: bool,
    #[serde(default)]
    pub amplitude_overrides: AmplitudeOverrides,
}

/// Noise floor multiplier for a floating (ungrounded) third electrode.
pub const UNGROUNDED_NOISE_FACTOR: f64 = 5.0;

const LEAD2_RS: f64 = 1.4;
const R_SHARE: f64 = 0.85;
const Q_AMP: f64 = -0.1;
const U_AMP: f64 = 0.05;

impl LeadConfig {
    pub fn new(lead: Lead) -> Self {
        LeadConfig {
            lead,
            common_ground: true,
            amplitude_overrides: AmplitudeOverrides::default(),
        }
    }

    pub fn ungrounded(mut self) -> Self {
        self.common_ground = false;
        self
    }

    pub fn noise_factor(&self) -> f64 {
        if self.common_ground {
            1.0
        } else {
            UNGROUNDED_NOISE_FACTOR
        }
    }

    pub fn amplitudes(&self) -> WaveAmplitudes {
        let base = self.lead.machine_amplitudes();
        let scale = base.rs / LEAD2_RS;
        let o = &self.amplitude_overrides;
        let r = o.r.unwrap_or(R_SHARE * base.rs);
        WaveAmplitudes {
            p: o.p.unwrap_or(base.p),
            q: o.q.unwrap_or(Q_AMP * scale),
            r,
            // with default R, R - S equals the lead's excursion
            s: o.s.unwrap_or(-(1.0 - R_SHARE) * base.rs),
            t: o.t.unwrap_or(base.t),
            u: o.u.unwrap_or(U_AMP * scale),
        }
    }
}
