//! Flat-file persistence.
//!
//! A recording is a 19-byte header (`BANREC1`, channel id, kind code,
//! sample rate u16 LE, start time f64 LE as Unix seconds) followed by wire
//! frames exactly as received. Frames are written one `write` call each, so
//! after a crash everything up to the last complete frame is readable.
//! Alert events, acknowledgements and SMS ledger entries go to a separate
//! JSON-lines log.

use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use wban_core::wire::{FrameSplitter, SplitEvent, WireFrame};
use wban_core::SampleFrame;

use crate::config::SignalKind;
use crate::error::{MonitorError, Result};
use crate::rules::AlertEvent;
use crate::sms::SmsRecord;

pub const RECORDING_MAGIC: &[u8; 7] = b"BANREC1";
pub const HEADER_LEN: usize = 19;
pub const RECORDING_EXT: &str = "banrec";
pub const EVENT_LOG: &str = "events.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub channel_id: u8,
    pub kind: SignalKind,
    pub sample_rate: u16,
    pub start_time: f64,
}

impl RecordingHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..7].copy_from_slice(RECORDING_MAGIC);
        b[7] = self.channel_id;
        b[8] = self.kind.code();
        b[9..11].copy_from_slice(&self.sample_rate.to_le_bytes());
        b[11..19].copy_from_slice(&self.start_time.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN || &b[..7] != RECORDING_MAGIC {
            return Err(MonitorError::Recording(
                "not a recording (bad magic or short header)".into(),
            ));
        }
        let kind = SignalKind::from_code(b[8])
            .ok_or_else(|| MonitorError::Recording(format!("unknown kind code {}", b[8])))?;
        Ok(RecordingHeader {
            channel_id: b[7],
            kind,
            sample_rate: u16::from_le_bytes([b[9], b[10]]),
            start_time: f64::from_le_bytes(b[11..19].try_into().expect("8 bytes")),
        })
    }
}

/// Append-only recording file.
pub struct RecordingWriter {
    id: String,
    header: RecordingHeader,
    path: PathBuf,
    file: Option<File>,
    frames: u64,
}

impl RecordingWriter {
    /// Creates `<dir>/<id>.banrec`, choosing the first free
    /// `ch<channel>-<n>` id.
    pub fn create(dir: &Path, header: RecordingHeader) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        for n in 1u32.. {
            let id = format!("ch{}-{n:04}", header.channel_id);
            let path = dir.join(format!("{id}.{RECORDING_EXT}"));
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut file) => {
                    file.write_all(&header.to_bytes())?;
                    return Ok(RecordingWriter {
                        id,
                        header,
                        path,
                        file: Some(file),
                        frames: 0,
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        }
        unreachable!("recording ids exhausted")
    }

    /// Creates (or replaces) a recording at an explicit path; the id is the
    /// file stem.
    pub fn create_at(path: &Path, header: RecordingHeader) -> Result<Self> {
        let mut file = File::create(path)?;
        file.write_all(&header.to_bytes())?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(RecordingWriter {
            id,
            header,
            path: path.to_path_buf(),
            file: Some(file),
            frames: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn header(&self) -> &RecordingHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn is_active(&self) -> bool {
        self.file.is_some()
    }

    /// Appends one frame. On failure persistence stops for this recording
    /// and the error is returned once.
    pub fn append(&mut self, frame: &WireFrame) -> Result<()> {
        let Some(file) = self.file.as_mut() else {
            return Ok(());
        };
        let bytes = frame
            .encode()
            .map_err(|e| MonitorError::Recording(e.to_string()))?;
        if let Err(e) = file.write_all(&bytes) {
            self.file = None;
            return Err(e.into());
        }
        self.frames += 1;
        Ok(())
    }
}

/// A recording read back from disk.
#[derive(Debug, Clone)]
pub struct Recording {
    pub header: RecordingHeader,
    pub frames: Vec<WireFrame>,
    /// Bytes after the last complete frame, or in damaged regions.
    pub discarded_bytes: usize,
}

impl Recording {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let header = RecordingHeader::parse(bytes)?;
        let mut sp = FrameSplitter::new();
        let mut events = sp.push(&bytes[HEADER_LEN..]);
        events.extend(sp.finish());
        let mut frames = Vec::new();
        let mut discarded_bytes = 0;
        for e in events {
            match e {
                SplitEvent::Frame(f) => frames.push(f),
                SplitEvent::Corrupt(c) => discarded_bytes += c.skipped,
            }
        }
        Ok(Recording {
            header,
            frames,
            discarded_bytes,
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    /// Frames in mV with `t0` from the running sample count.
    pub fn sample_frames(&self) -> Vec<SampleFrame> {
        let mut t = 0usize;
        self.frames
            .iter()
            .map(|f| {
                let fr = f.to_sample_frame(t as f64 / f.sample_rate as f64);
                t += f.samples.len();
                fr
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingInfo {
    pub id: String,
    pub channel_id: u8,
    pub kind: SignalKind,
    pub sample_rate: u16,
    pub start_time: f64,
    pub bytes: u64,
}

/// Recordings in `dir`, sorted by id. Unreadable files are skipped.
pub fn list_recordings(dir: &Path) -> Vec<RecordingInfo> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut out: Vec<RecordingInfo> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == RECORDING_EXT))
        .filter_map(|e| {
            let path = e.path();
            let mut head = [0u8; HEADER_LEN];
            let mut f = File::open(&path).ok()?;
            std::io::Read::read_exact(&mut f, &mut head).ok()?;
            let h = RecordingHeader::parse(&head).ok()?;
            Some(RecordingInfo {
                id: path.file_stem()?.to_string_lossy().into_owned(),
                channel_id: h.channel_id,
                kind: h.kind,
                sample_rate: h.sample_rate,
                start_time: h.start_time,
                bytes: e.metadata().ok()?.len(),
            })
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Path of recording `id` in `dir`, if the id is well-formed and present.
pub fn recording_path(dir: &Path, id: &str) -> Option<PathBuf> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        return None;
    }
    let p = dir.join(format!("{id}.{RECORDING_EXT}"));
    p.is_file().then_some(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogRecord {
    Event(AlertEvent),
    Ack { event_id: u64 },
    Sms(SmsRecord),
}

/// Append-only JSON-lines log.
pub struct EventLog {
    file: File,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(EventLog {
            file: OpenOptions::new().create(true).append(true).open(path)?,
        })
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record).expect("log record serialises");
        line.push(b'\n');
        self.file.write_all(&line)?;
        Ok(())
    }
}

/// Parses a log, ignoring lines that do not parse (such as a torn last line).
pub fn read_log(path: &Path) -> Vec<LogRecord> {
    let Ok(f) = File::open(path) else {
        return Vec::new();
    };
    BufReader::new(f)
        .lines()
        .map_while(|l| l.ok())
        .filter_map(|l| serde_json::from_str(&l).ok())
        .collect()
}
