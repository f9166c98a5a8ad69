//! Binary framing for streaming sample frames.
//!
//! ```text
//! offset  size  field
//!      0     2  magic 0xBA 0x4E
//!      2     1  version (1)
//!      3     1  channel id
//!      4     4  seq, u32 LE
//!      8     2  sample rate Hz, u16 LE
//!     10     2  sample count, u16 LE (<= 4096)
//!     12   2*n  samples, i16 LE microvolts
//!   12+2n    2  CRC-16/CCITT-FALSE over bytes 0..12+2n, u16 LE
//! ```

use crc::{Crc, CRC_16_IBM_3740};
use thiserror::Error;

use crate::frame::SampleFrame;

pub const MAGIC: [u8; 2] = [0xBA, 0x4E];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
pub const CRC_LEN: usize = 2;
pub const MAX_SAMPLES: usize = 4096;
/// Largest encodable magnitude in mV (i16 microvolts).
pub const MAX_MV: f64 = 32.767;

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout.
pub const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn frame_len(count: usize) -> usize {
    HEADER_LEN + 2 * count + CRC_LEN
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("sample {index} out of range (|v| <= 32.767 mV)")]
    Range { index: usize },
    #[error("frame too large: {count} samples (max 4096)")]
    Size { count: usize },
    #[error("sample rate {0} Hz not representable (1..=65535, integral)")]
    SampleRate(u64),
    #[error("protocol error: {0}")]
    Protocol(&'static str),
    #[error("CRC mismatch: computed {computed:#06x}, frame carries {received:#06x}")]
    Integrity { computed: u16, received: u16 },
    #[error("incomplete frame: need {needed} bytes, have {available}")]
    Incomplete { needed: usize, available: usize },
}

impl WireError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            WireError::Range { .. } | WireError::Size { .. } | WireError::SampleRate(_) => {
                ErrorKind::Encode
            }
            WireError::Protocol(_) => ErrorKind::Protocol,
            WireError::Integrity { .. } => ErrorKind::Integrity,
            WireError::Incomplete { .. } => ErrorKind::Incomplete,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Encode,
    Protocol,
    Integrity,
    Incomplete,
}

/// A frame as carried on the wire: quantised samples, integral rate, no t0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub channel_id: u8,
    pub seq: u32,
    pub sample_rate: u16,
    /// Microvolts.
    pub samples: Vec<i16>,
}

/// mV to i16 microvolts, rounding half away from zero.
pub fn quantize(mv: f64) -> Option<i16> {
    let uv = (mv * 1000.0).round();
    (uv.is_finite() && uv.abs() <= i16::MAX as f64).then_some(uv as i16)
}

impl WireFrame {
    pub fn from_sample_frame(frame: &SampleFrame) -> Result<Self, WireError> {
        if frame.samples.len() > MAX_SAMPLES {
            return Err(WireError::Size {
                count: frame.samples.len(),
            });
        }
        let fs = frame.sample_rate;
        if !(fs.fract() == 0.0 && (1.0..=u16::MAX as f64).contains(&fs)) {
            return Err(WireError::SampleRate(fs.max(0.0) as u64));
        }
        let samples = frame
            .samples
            .iter()
            .enumerate()
            .map(|(index, &v)| quantize(v).ok_or(WireError::Range { index }))
            .collect::<Result<_, _>>()?;
        Ok(WireFrame {
            channel_id: frame.channel_id,
            seq: frame.seq,
            sample_rate: fs as u16,
            samples,
        })
    }

    pub fn to_sample_frame(&self, t0: f64) -> SampleFrame {
        SampleFrame {
            channel_id: self.channel_id,
            seq: self.seq,
            sample_rate: self.sample_rate as f64,
            t0,
            samples: self.samples.iter().map(|&uv| uv as f64 / 1000.0).collect(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        frame_len(self.samples.len())
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), WireError> {
        if self.samples.len() > MAX_SAMPLES {
            return Err(WireError::Size {
                count: self.samples.len(),
            });
        }
        let start = out.len();
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.channel_id);
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u16).to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        let crc = CRC16.checksum(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(())
    }
}

/// Encodes a sample frame, quantising to 1 uV.
pub fn encode_frame(frame: &SampleFrame) -> Result<Vec<u8>, WireError> {
    WireFrame::from_sample_frame(frame)?.encode()
}

/// Decodes one frame from the front of `bytes`, returning it and the number
/// of bytes consumed.
///
/// Checks run in wire order (magic, version, count, length, CRC) so any
/// error visible in a prefix is reported as soon as that prefix is present.
pub fn decode_frame(bytes: &[u8]) -> Result<(WireFrame, usize), WireError> {
    let incomplete = |needed: usize| WireError::Incomplete {
        needed,
        available: bytes.len(),
    };
    for (i, &m) in MAGIC.iter().enumerate() {
        match bytes.get(i) {
            None => return Err(incomplete(HEADER_LEN)),
            Some(&b) if b != m => return Err(WireError::Protocol("bad magic")),
            _ => {}
        }
    }
    match bytes.get(2) {
        None => return Err(incomplete(HEADER_LEN)),
        Some(&v) if v != VERSION => return Err(WireError::Protocol("unsupported version")),
        _ => {}
    }
    if bytes.len() < HEADER_LEN {
        return Err(incomplete(HEADER_LEN));
    }
    let count = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    if count > MAX_SAMPLES {
        return Err(WireError::Protocol("sample count exceeds 4096"));
    }
    let total = frame_len(count);
    if bytes.len() < total {
        return Err(incomplete(total));
    }
    let body = &bytes[..total - CRC_LEN];
    let received = u16::from_le_bytes([bytes[total - 2], bytes[total - 1]]);
    let computed = CRC16.checksum(body);
    if computed != received {
        return Err(WireError::Integrity { computed, received });
    }
    let frame = WireFrame {
        channel_id: bytes[3],
        seq: u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
        sample_rate: u16::from_le_bytes([bytes[8], bytes[9]]),
        samples: body[HEADER_LEN..]
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect(),
    };
    Ok((frame, total))
}

/// One corrupted region of the byte stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptRegion {
    /// First error encountered in the region.
    pub kind: ErrorKind,
    /// Bytes discarded while resynchronising.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitEvent {
    Frame(WireFrame),
    Corrupt(CorruptRegion),
}

/// Incremental frame extractor for a byte stream.
///
/// Garbage and undecodable candidates are skipped byte by byte until the
/// next valid frame; each such stretch yields a single
/// [`SplitEvent::Corrupt`], emitted just before the frame that ends it (or
/// by [`FrameSplitter::finish`]).
#[derive(Debug, Default)]
pub struct FrameSplitter {
    buf: Vec<u8>,
    corrupt: Option<CorruptRegion>,
}

impl FrameSplitter {
    pub fn new() -> Self {
        Self::default()
    }

    fn skip(&mut self, n: usize, kind: ErrorKind) {
        self.buf.drain(..n);
        let region = self
            .corrupt
            .get_or_insert(CorruptRegion { kind, skipped: 0 });
        region.skipped += n;
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<SplitEvent> {
        let mut events = Vec::new();
        self.push_into(bytes, &mut events);
        events
    }

    pub fn push_into(&mut self, bytes: &[u8], events: &mut Vec<SplitEvent>) {
        self.buf.extend_from_slice(bytes);
        loop {
            let start = self.buf.windows(2).position(|w| w == MAGIC);
            match start {
                None => {
                    let keep = usize::from(self.buf.last() == Some(&MAGIC[0]));
                    let drop = self.buf.len() - keep;
                    if drop > 0 {
                        self.skip(drop, ErrorKind::Protocol);
                    }
                    return;
                }
                Some(p) if p > 0 => self.skip(p, ErrorKind::Protocol),
                Some(_) => {}
            }
            match decode_frame(&self.buf) {
                Ok((frame, used)) => {
                    self.buf.drain(..used);
                    if let Some(region) = self.corrupt.take() {
                        events.push(SplitEvent::Corrupt(region));
                    }
                    events.push(SplitEvent::Frame(frame));
                }
                Err(WireError::Incomplete { .. }) => return,
                Err(e) => self.skip(1, e.kind()),
            }
        }
    }

    /// Flushes at end of stream. A candidate that can no longer complete is
    /// skipped byte by byte so that frames buffered behind it still surface.
    pub fn finish(mut self) -> Vec<SplitEvent> {
        let mut events = Vec::new();
        while !self.buf.is_empty() {
            self.skip(1, ErrorKind::Incomplete);
            self.push_into(&[], &mut events);
        }
        events.extend(self.corrupt.take().map(SplitEvent::Corrupt));
        events
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(samples: Vec<f64>) -> SampleFrame {
        SampleFrame::new(1, 0, 250.0, 0.0, samples).unwrap()
    }

    #[test]
    fn quantisation_rounds_half_away_from_zero() {
        assert_eq!(quantize(0.0005), Some(1));
        assert_eq!(quantize(-0.0005), Some(-1));
        assert_eq!(quantize(0.0004), Some(0));
        assert_eq!(quantize(32.767), Some(32767));
        assert_eq!(quantize(32.768), None);
        assert_eq!(quantize(-32.768), None);
    }

    #[test]
    fn encode_errors() {
        assert_eq!(
            encode_frame(&frame(vec![33.0])),
            Err(WireError::Range { index: 0 })
        );
        assert_eq!(
            encode_frame(&frame(vec![0.0; 4097])),
            Err(WireError::Size { count: 4097 })
        );
        let mut f = frame(vec![0.0]);
        f.sample_rate = 250.5;
        assert!(matches!(encode_frame(&f), Err(WireError::SampleRate(_))));
        assert_eq!(
            encode_frame(&frame(vec![0.0; 4096])).unwrap().len(),
            frame_len(4096)
        );
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(
            decode_frame(&[]),
            Err(WireError::Incomplete { .. })
        ));
        assert!(matches!(
            decode_frame(&[0xBA, 0x00]),
            Err(WireError::Protocol(_))
        ));
        assert!(matches!(
            decode_frame(&[0xBA, 0x4E, 2]),
            Err(WireError::Protocol(_))
        ));
        let mut bytes = encode_frame(&frame(vec![1.0, -1.0])).unwrap();
        bytes[10] = 0xFF;
        bytes[11] = 0xFF;
        assert!(matches!(decode_frame(&bytes), Err(WireError::Protocol(_))));
    }

    #[test]
    fn splitter_handles_garbage_then_frame() {
        let good = encode_frame(&frame(vec![0.1, 0.2])).unwrap();
        let mut bytes = vec![0x00, 0xBA, 0x4E, 0x07, 0x11];
        bytes.extend_from_slice(&good);
        let mut sp = FrameSplitter::new();
        let events = sp.push(&bytes);
        assert_eq!(events.len(), 2);
        assert!(matches!(
            events[0],
            SplitEvent::Corrupt(CorruptRegion { skipped: 5, .. })
        ));
        assert!(matches!(events[1], SplitEvent::Frame(_)));
        assert!(sp.finish().is_empty());
    }

    #[test]
    fn trailing_partial_frame_reported_on_finish() {
        let good = encode_frame(&frame(vec![0.1, 0.2])).unwrap();
        let mut sp = FrameSplitter::new();
        assert!(sp.push(&good[..7]).is_empty());
        assert_eq!(
            sp.finish(),
            vec![SplitEvent::Corrupt(CorruptRegion {
                kind: ErrorKind::Incomplete,
                skipped: 7
            })]
        );
    }
}
