use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::frame::SampleFrame;

/// A sinusoidal interference component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tone {
    pub freq: f64,
    pub amp: f64,
}

impl Tone {
    pub const fn new(freq: f64, amp: f64) -> Self {
        Tone { freq, amp }
    }
}

/// Additive noise: baseline wander, mains interference and white Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub baseline_wander: Tone,
    pub powerline: Tone,
    pub broadband_std: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn broadband(std: f64, seed: u64) -> Self {
        NoiseSpec {
            broadband_std: std,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, tone) in [
            ("baseline_wander", self.baseline_wander),
            ("powerline", self.powerline),
        ] {
            if !(tone.amp.is_finite() && tone.amp >= 0.0) {
                return Err(Error::invalid(format!("{name} amplitude must be >= 0")));
            }
            if !(tone.freq.is_finite() && tone.freq >= 0.0) {
                return Err(Error::invalid(format!("{name} frequency must be >= 0")));
            }
        }
        if !(self.broadband_std.is_finite() && self.broadband_std >= 0.0) {
            return Err(Error::invalid("broadband_std must be >= 0"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.baseline_wander.amp == 0.0 && self.powerline.amp == 0.0 && self.broadband_std == 0.0
    }
}

/// Stateful noise source; the Gaussian sequence continues across frames.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    spec: NoiseSpec,
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    pub fn new(spec: NoiseSpec) -> Result<Self> {
        spec.validate()?;
        let normal = if spec.broadband_std > 0.0 {
            Some(Normal::new(0.0, spec.broadband_std).map_err(|e| Error::invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(NoiseSource {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            normal,
        })
    }

    pub fn apply(&mut self, frame: &mut SampleFrame) {
        let spec = self.spec;
        for i in 0..frame.samples.len() {
            let t = frame.time_of(i);
            let mut v = frame.samples[i];
            // zero-amplitude terms are skipped so a zero spec is an exact identity
            if spec.baseline_wander.amp > 0.0 {
                v += spec.baseline_wander.amp * (TAU * spec.baseline_wander.freq * t).sin();
            }
            if spec.powerline.amp > 0.0 {
                v += spec.powerline.amp * (TAU * spec.powerline.freq * t).sin();
            }
            if let Some(normal) = &self.normal {
                v += normal.sample(&mut self.rng);
            }
            frame.samples[i] = v;
        }
    }
}

/// Iterator adapter produced by [`add_noise`].
pub struct AddNoise<I> {
    inner: I,
    source: NoiseSource,
}

impl<I: Iterator<Item = SampleFrame>> Iterator for AddNoise<I> {
    type Item = SampleFrame;

    fn next(&mut self) -> Option<SampleFrame> {
        let mut frame = self.inner.next()?;
        self.source.apply(&mut frame);
        Some(frame)
    }
}

pub fn add_noise<I>(frames: I, spec: NoiseSpec) -> Result<AddNoise<I::IntoIter>>
where
    I: IntoIterator<Item = SampleFrame>,
{
    Ok(AddNoise {
        inner: frames.into_iter(),
        source: NoiseSource::new(spec)?,
    })
}
