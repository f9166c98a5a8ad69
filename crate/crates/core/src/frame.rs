use crate::error::{Error, Result};

/// A timestamped block of uniformly sampled values for one channel.
///
/// Amplitudes are in millivolts, `t0` is seconds since stream start.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    pub channel_id: u8,
    pub seq: u32,
    pub sample_rate: f64,
    pub t0: f64,
    pub samples: Vec<f64>,
}

impl SampleFrame {
    pub fn new(
        channel_id: u8,
        seq: u32,
        sample_rate: f64,
        t0: f64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        let frame = SampleFrame {
            channel_id,
            seq,
            sample_rate,
            t0,
            samples,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::invalid(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::invalid("frame has no samples"));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Time of sample `i`.
    pub fn time_of(&self, i: usize) -> f64 {
        self.t0 + i as f64 / self.sample_rate
    }

    /// Joins consecutive frames of one stream into a single record.
    ///
    /// Metadata comes from the first frame; returns `None` for an empty stream.
    pub fn concat<I>(frames: I) -> Result<Option<SampleFrame>>
    where
        I: IntoIterator<Item = SampleFrame>,
    {
        let mut iter = frames.into_iter();
        let Some(mut joined) = iter.next() else {
            return Ok(None);
        };
        for f in iter {
            if f.sample_rate != joined.sample_rate {
                return Err(Error::invalid(format!(
                    "sample rate changed mid-stream: {} then {}",
                    joined.sample_rate, f.sample_rate
                )));
            }
            joined.samples.extend_from_slice(&f.samples);
        }
        Ok(Some(joined))
    }

    /// Splits a record into frames of at most `frame_len` samples with consecutive `seq`.
    pub fn chunks(&self, frame_len: usize) -> impl Iterator<Item = SampleFrame> + '_ {
        let frame_len = frame_len.max(1);
        self.samples
            .chunks(frame_len)
            .enumerate()
            .map(move |(i, chunk)| SampleFrame {
                channel_id: self.channel_id,
                seq: self.seq.wrapping_add(i as u32),
                sample_rate: self.sample_rate,
                t0: self.t0 + (i * frame_len) as f64 / self.sample_rate,
                samples: chunk.to_vec(),
            })
    }
}
